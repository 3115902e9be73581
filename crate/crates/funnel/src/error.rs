//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor shape was malformed (zero dimension, impossible geometry).
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// Two tensors that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A scalar argument violated its precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A layer or model configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A model description failed validation; one diagnostic per problem.
    #[error("model validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// A binary file did not match its documented format.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation was called in a state it does not support.
    #[error("state error: {0}")]
    State(String),

    /// An index was outside the valid range.
    #[error("index out of range: {0}")]
    Index(String),
}

pub type Result<T> = std::result::Result<T, Error>;
