//! Run manifests: every command records its inputs, outputs (with
//! checksums), seeds, and wall-clock timings, so reruns can be compared
//! artifact by artifact.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::failure::{CliFailure, CliResult};
use crate::rundir;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub crc32: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub created_unix: u64,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub timings_secs: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn checksum_of(&self, file_name: &str) -> Option<&str> {
        self.outputs
            .iter()
            .find(|a| a.path == file_name)
            .map(|a| a.crc32.as_str())
    }
}

fn artifact_of(path: &Path, rel: String, bytes: &[u8]) -> Artifact {
    let _ = path;
    Artifact {
        path: rel,
        bytes: bytes.len() as u64,
        crc32: format!("{:08x}", crc32fast::hash(bytes)),
    }
}

/// Builder that tracks artifacts and timings for one command invocation.
pub struct ManifestWriter {
    manifest: RunManifest,
    started: Instant,
    last_mark: Instant,
}

impl ManifestWriter {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        let now = Instant::now();
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                seed,
                created_unix: rundir::unix_now(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings_secs: BTreeMap::new(),
            },
            started: now,
            last_mark: now,
        }
    }

    pub fn note_input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = crate::failure::read_file(path)?;
        self.manifest
            .inputs
            .push(artifact_of(path, path.display().to_string(), &bytes));
        Ok(())
    }

    /// Writes `bytes` to `dir/name` and records the artifact checksum.
    pub fn write_output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes)
            .map_err(|e| CliFailure::input(format!("{}: {e}", path.display())))?;
        self.manifest
            .outputs
            .push(artifact_of(&path, name.to_string(), bytes));
        Ok(())
    }

    /// Records the time elapsed since the previous mark (or construction).
    pub fn mark(&mut self, phase: &str) {
        let now = Instant::now();
        let secs = now.duration_since(self.last_mark).as_secs_f64();
        self.manifest.timings_secs.insert(phase.to_string(), secs);
        self.last_mark = now;
    }

    /// Writes `manifest.json` into the run directory and returns the
    /// finished manifest.
    pub fn finish(mut self, dir: &Path) -> CliResult<RunManifest> {
        self.manifest
            .timings_secs
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliFailure::input(e.to_string()))?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, json)
            .map_err(|e| CliFailure::input(format!("{}: {e}", path.display())))?;
        Ok(self.manifest)
    }
}
