use std::path::PathBuf;

use thiserror::Error;

/// Failures of a CLI command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Verification(_) => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<gtraj::Error> for CliError {
    fn from(e: gtraj::Error) -> Self {
        match e {
            gtraj::Error::Config(_) | gtraj::Error::Index { .. } => CliError::Config(e.to_string()),
            gtraj::Error::Numeric { .. } | gtraj::Error::Resource(_) => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
