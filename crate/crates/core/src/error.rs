use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid qubit count {0}: expected at least 1")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate parameter vector: tau is all zeros")]
    DegenerateParameter,

    #[error("Cholesky decomposition failed: pivot {pivot} is {value:e}")]
    Decomposition { pivot: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    /// The line search failed repeatedly; carries the last accepted point.
    #[error("line search stalled after {failures} consecutive failures (f = {value:e})")]
    Stalled {
        failures: usize,
        point: Vec<f64>,
        value: f64,
        iterations: usize,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid network configuration: {0}")]
    Config(String),

    #[error("unsupported format version {0}")]
    UnsupportedFormat(i64),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("corrupt checkpoint {path}: {message}")]
    CorruptCheckpoint { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
