use std::path::PathBuf;

use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("record {record_id}: need at least 2 R-peaks, found {found}")]
    InsufficientBeats { record_id: String, found: usize },

    #[error("no beats detected: {0}")]
    NoBeats(String),

    #[error("degenerate feature vector at row {row} (zero norm)")]
    DegenerateFeature { row: usize },

    #[error("degenerate embedding at row {row} (zero norm)")]
    DegenerateEmbedding { row: usize },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("data leakage: {0}")]
    Leakage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape { expected: expected.to_string(), actual: actual.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
