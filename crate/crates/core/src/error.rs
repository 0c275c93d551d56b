use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("{op}: dimension mismatch, {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument is outside the documented domain.
    #[error("invalid input: {0}")]
    Validation(String),

    /// Malformed binary file; `offset` is the byte position where decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A NaN or infinity reached a place where it must abort the run.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A pipeline stage was invoked before its upstream artifact exists.
    #[error("stage order: `{stage}` requires the output of `{missing}`")]
    StageOrder {
        stage: &'static str,
        missing: &'static str,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
