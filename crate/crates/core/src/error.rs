//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for data ingestion, model configuration and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be parsed; carries the 1-based line number.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Invalid configuration (unknown format, bad hyperparameter, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or roster shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Event labels refer to unknown players or times outside the episode.
    #[error("label error: {0}")]
    Label(String),

    /// Too few frames for an operation (e.g. derivatives need T >= 2).
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A set encoder received an empty set.
    #[error("empty set input")]
    EmptySet,

    /// Non-finite values or numeric underflow during training/inference.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Infeasible match script (e.g. pass flight outside the allowed speed band).
    #[error("script error: {0}")]
    Script(String),

    /// Checkpoint serialization problems or config mismatches on load.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
