use std::path::PathBuf;

use awe_tensorkit::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {msg}")]
    Validation { field: String, msg: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("integrity check failed for {name}: {msg}")]
    Integrity { name: String, msg: String },

    #[error("unsupported WAV file: {0}")]
    WavFormat(String),

    #[error("input too short: {got} frames/samples, at least {min} required")]
    TooShort { got: usize, min: usize },

    #[error("no word has instances from two or more distinct speakers")]
    NoPairAvailable,

    #[error("incompatible model file: {0}")]
    Incompatible(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unknown {kind} `{name}` (available: {available})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation { .. } => "validation",
            Error::Io { .. } => "io",
            Error::Integrity { .. } => "integrity",
            Error::WavFormat(_) => "wav_format",
            Error::TooShort { .. } => "too_short",
            Error::NoPairAvailable => "no_pair_available",
            Error::Incompatible(_) => "incompatible",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Unknown { .. } => "unknown",
            Error::Tensor(_) => "tensor",
            Error::Json { .. } => "json",
        }
    }
}
