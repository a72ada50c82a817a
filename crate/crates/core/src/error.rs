use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VastError>;

#[derive(Debug, Error)]
pub enum VastError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {path}: {message}")]
    Header { path: PathBuf, message: String },

    #[error("shape mismatch for {what}: expected {expected} elements, found {found}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("need at least {needed} samples, found {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("tensor decomposition did not converge after {iterations} iterations (last change {last_change:e})")]
    Decomposition { iterations: usize, last_change: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} case(s) failed; see the timing report")]
    CaseFailures(usize),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl VastError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VastError::Io {
            path: path.into(),
            source,
        }
    }
}
