use std::path::{Path, PathBuf};

use coco_core::CocoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl From<CocoError> for CliError {
    fn from(e: CocoError) -> Self {
        match e {
            CocoError::PosteriorCollapse { .. } | CocoError::OracleStarvation { .. } => CliError::Numeric(e.to_string()),
            CocoError::DegenerateKernel { .. } | CocoError::MeasureMismatch { .. } => CliError::Invariant(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(format!("csv: {e}"))
    }
}
