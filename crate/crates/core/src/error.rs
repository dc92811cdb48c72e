use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = KgeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("infinite divergence: q[{index}] = 0 where p[{index}] > 0")]
    Divergence { index: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("index {index} out of range (size {size})")]
    Index { index: usize, size: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: bce={bce}, kl={kl}")]
    NumericAbort {
        epoch: usize,
        batch: usize,
        bce: f64,
        kl: f64,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match configuration: {0}")]
    CheckpointMismatch(String),
}

impl KgeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KgeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        KgeError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
