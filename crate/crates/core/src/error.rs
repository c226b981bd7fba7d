use std::io;

use thiserror::Error;

/// Failures raised by tensor arithmetic and the differentiation tape.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
}

impl TensorError {
    pub(crate) fn dims(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        TensorError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("feature record `{image_id}`: {detail}")]
    Feature { image_id: String, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
