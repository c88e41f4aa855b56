use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{0} requires a non-empty input")]
    Empty(&'static str),

    #[error("{0} is undefined for a zero-norm vector")]
    ZeroNorm(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "training diverged at round {round}{}: {reason}",
        client.map(|c| format!(", client {c}")).unwrap_or_default()
    )]
    Diverged {
        round: usize,
        /// `None` when the aggregate, not a single client, went non-finite.
        client: Option<usize>,
        reason: String,
    },

    #[error("malformed IDX data: {0}")]
    Idx(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
