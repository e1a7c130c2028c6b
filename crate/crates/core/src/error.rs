use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, indices or knob values that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs for which an operation is mathematically undefined
    /// (zero-norm vectors, zero-probability conditioning events).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An operation was invoked on an agent it does not apply to.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Training produced a non-finite loss.
    #[error("non-finite loss on agent {agent}, round {round}, batch {batch}")]
    NonFinite {
        agent: usize,
        round: usize,
        batch: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
