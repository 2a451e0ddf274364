use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments supplied by the caller.
    #[error("configuration error: {0}")]
    Config(String),

    /// A dataset file could not be read or is malformed.
    #[error("failed to ingest {}: {reason}", path.display())]
    Ingest { path: PathBuf, reason: String },

    /// Aggregation or exchange invoked on inputs the protocol does not allow.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Violated internal precondition (mismatched vector lengths and similar).
    #[error("internal error: {0}")]
    Internal(String),

    /// Metric computation over a log that cannot support it.
    #[error("reporting error: {0}")]
    Report(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("round {round}, client {client}: {source}")]
    Client {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    /// Strips [`Error::Client`] context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Client { source, .. } => source.root(),
            other => other,
        }
    }
}
