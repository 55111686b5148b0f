use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty embedding set")]
    EmptySet,

    #[error("record {record}: {message}")]
    Record { record: usize, message: String },

    #[error("duplicate sample_id {id:?} at record {record}")]
    DuplicateId { id: String, record: usize },

    #[error("zero-norm feature for sample {0:?}")]
    ZeroNorm(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient clusters for negatives: need at least 2 selected clusters, have {0}")]
    InsufficientClusters(usize),

    #[error("non-finite gradient in batch {batch}")]
    NonFiniteGradient { batch: usize },

    #[error("no reliable checkpoints: all reliability weights are zero")]
    NoReliableCheckpoints,

    #[error("sample id misalignment between model feature sets: {0:?}")]
    Misaligned(String),

    #[error("cannot place {identities} identity centers with separation {spread} after {attempts} attempts; try a smaller identity_spread")]
    Placement {
        identities: usize,
        spread: f64,
        attempts: usize,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("malformed history at line {line}: {message}")]
    History { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn record(record: usize, message: impl Into<String>) -> Self {
        Error::Record {
            record,
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
