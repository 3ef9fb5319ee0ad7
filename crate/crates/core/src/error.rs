use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },

    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Malformed document. `offset` is the byte offset of the failure.
    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown image_id {0}")]
    UnknownImage(u64),

    #[error("file_name {0:?} present in both labeled and pseudo datasets")]
    Contamination(String),

    #[error("dataset has no images")]
    EmptyDataset,

    #[error("infeasible scene: {0}")]
    InfeasibleScene(String),

    #[error("frame indices must be strictly increasing (index {current} follows {previous})")]
    NonMonotoneFrames { previous: u64, current: u64 },

    #[error("digest mismatch for {path}: manifest records {expected}, file hashes to {actual}")]
    DigestMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

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
