use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero vector has no defined residual ratio")]
    ZeroVector,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} out of range: {value} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no usable gradient signal in {0}")]
    NoGradientSignal(&'static str),

    #[error("malformed gradient update at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("{path}:{line}: {reason}")]
    Corpus {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Write {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from configuration or input validation
    /// rather than from a failure while running an experiment.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::Corpus { .. } | Error::Io { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
