use std::path::Path;

use cace_core::CaceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },

    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] CaceError),

    #[error("digest mismatch for {what}: manifest has {expected}, found {actual}")]
    DigestMismatch { what: String, expected: String, actual: String },

    #[error("{0}")]
    Partial(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn read(path: &Path, e: std::io::Error) -> Self {
        CliError::Read { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn write(path: &Path, e: std::io::Error) -> Self {
        CliError::Write { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Input(_) => 2,
            CliError::Core(e) => core_exit_code(e),
            CliError::Partial(_) => 3,
            CliError::DigestMismatch { .. } => 4,
            CliError::Write { .. } | CliError::Internal(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Read { .. } => "read",
            CliError::Write { .. } => "write",
            CliError::Input(_) => "input",
            CliError::Core(_) => "model",
            CliError::DigestMismatch { .. } => "digest_mismatch",
            CliError::Partial(_) => "partial_failure",
            CliError::Internal(_) => "internal",
        }
    }
}

fn core_exit_code(e: &CaceError) -> i32 {
    match e {
        CaceError::Parse { .. }
        | CaceError::Validation { .. }
        | CaceError::EmptyArm { .. }
        | CaceError::EmptyPattern { .. }
        | CaceError::Calibration { .. }
        | CaceError::TooLarge { .. }
        | CaceError::Config(_) => 2,
        CaceError::ChainAborted { .. } | CaceError::AllUndefined => 3,
        _ => 5,
    }
}
