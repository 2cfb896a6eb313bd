//! Library side of the `gdc` binary: command implementations, run
//! manifests, and table rendering. The binary in `main.rs` is a thin
//! argument-parsing shell over this.

pub mod commands;
pub mod failure;
pub mod manifest;
pub mod rundir;
pub mod table;

pub use failure::{CliFailure, CliResult};

/// Exit-code contract: 0 success, 2 input error, 3 config error,
/// 4 runtime divergence.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
}

/// Caps the global worker pool from the `GDC_THREADS` environment
/// variable. Call once at startup; later calls are no-ops.
pub fn configure_threads() {
    if let Ok(v) = std::env::var("GDC_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
