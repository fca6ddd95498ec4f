use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("stream `{stream}` is not sorted by time at index {index}")]
    Unsorted { stream: String, index: usize },

    #[error("zero-magnitude CSI entry at (tx {tx}, rx {rx}, subcarrier {subcarrier}); phase undefined")]
    ZeroMagnitude { tx: usize, rx: usize, subcarrier: usize },

    #[error("adaptive solver exceeded {max_steps} steps; last accepted t = {last_t}")]
    MaxStepsExceeded { max_steps: usize, last_t: f64 },

    #[error("non-finite loss term `{term}`")]
    NonFiniteLoss { term: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
