use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A tie-sensitive operation found equal dissimilarities within a row.
    #[error("tied dissimilarities in row {row} (columns {first} and {second})")]
    Ties {
        row: usize,
        first: usize,
        second: usize,
    },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("point set has no labels")]
    MissingLabels,

    /// A backward pass was requested with a tape recorded against different parameters.
    #[error("stale tape: recorded at parameter version {tape}, network is at version {net}")]
    StaleTape { tape: u64, net: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
