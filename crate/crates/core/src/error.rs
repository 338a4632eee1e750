use std::path::PathBuf;

/// Errors produced by the detector library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}, column {column}: {message}")]
    Load {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset too short: {len} steps, need at least {needed}")]
    DatasetTooShort { len: usize, needed: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("gradient check failed for {group}: relative error {error:.3e} exceeds {tolerance:.1e}")]
    GradCheck {
        group: String,
        error: f64,
        tolerance: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
