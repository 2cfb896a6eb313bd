//! Run-directory layout: every command writes its artifacts under
//! `<out>/run-<timestamp>-<seedhash>/` alongside a manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::failure::{CliFailure, CliResult};

pub fn seed_hash(seed: u64) -> String {
    format!("{:08x}", crc32fast::hash(&seed.to_le_bytes()))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Creates a fresh run directory, uniquified if the timestamped name
/// already exists.
pub fn create(out_root: &Path, seed: u64) -> CliResult<PathBuf> {
    let base = format!("run-{}-{}", unix_now(), seed_hash(seed));
    let mut dir = out_root.join(&base);
    let mut suffix = 1;
    while dir.exists() {
        suffix += 1;
        dir = out_root.join(format!("{base}-{suffix}"));
    }
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliFailure::input(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}
