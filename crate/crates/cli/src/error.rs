use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] awe_qbe::Error),

    #[error("{} not found; run `{run}` first", path.display())]
    MissingArtifact { path: PathBuf, run: &'static str },

    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Machine-readable failure written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub error: &'static str,
    pub command: &'a str,
    pub message: String,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn record<'a>(&self, command: &'a str) -> ErrorRecord<'a> {
        ErrorRecord {
            error: self.kind(),
            command,
            message: self.to_string(),
        }
    }
}

/// Fails with a pointer to the producing command when `path` is absent.
pub fn require(path: PathBuf, run: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { path, run })
    }
}
