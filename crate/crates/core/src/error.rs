use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row}: field `{field}`: {reason}")]
    MalformedRow {
        row: usize,
        field: String,
        reason: String,
    },

    #[error("rating out of range at row {row}: {rating}")]
    RatingOutOfRange { row: usize, rating: i64 },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid format: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("request to {endpoint} failed after {attempts} attempt(s): {reason}")]
    Transport {
        endpoint: String,
        attempts: u32,
        reason: String,
    },

    #[error("service protocol error: {0}")]
    Protocol(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Best checkpoint seen before the failure, if any epoch completed.
        best: Option<Box<crate::checkpoint::Checkpoint>>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
