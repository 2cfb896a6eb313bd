//! Error-to-exit-code mapping for the CLI.

use gendatacarto::Error;

use crate::exit_code;

#[derive(Debug)]
pub struct CliFailure {
    pub code: i32,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliFailure>;

impl CliFailure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: exit_code::INPUT,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: exit_code::CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliFailure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::InvalidConfig(_)
            | Error::BadBurnIn { .. }
            | Error::BadRange { .. }
            | Error::BadEpochIndex(_)
            | Error::CanaryCollision { .. } => exit_code::CONFIG,
            Error::Divergence { .. } => exit_code::DIVERGENCE,
            _ => exit_code::INPUT,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliFailure {
    fn from(err: std::io::Error) -> Self {
        CliFailure::input(err.to_string())
    }
}

/// Reads a file, naming the path in the failure message.
pub fn read_file(path: &std::path::Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliFailure::input(format!("{}: {e}", path.display())))
}

pub fn read_file_string(path: &std::path::Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliFailure::input(format!("{}: {e}", path.display())))
}
