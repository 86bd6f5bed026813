use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface.
///
/// Variants are grouped by [`ErrorKind`] so the command-line front end can
/// map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    #[error("batch too small: train-mode batch normalization needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("failed to load dataset:\n{}", .0.join("\n"))]
    Load(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Contract(_) => ErrorKind::Config,
            Error::Load(_) | Error::Io { .. } | Error::Json { .. } | Error::Protocol(_) => {
                ErrorKind::Data
            }
            _ => ErrorKind::Runtime,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
