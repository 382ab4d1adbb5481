//! Error type shared by all modules.

use thiserror::Error;

/// Errors produced by graph construction, linear algebra, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Matrix dimensions do not chain.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The input is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A text input could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Underlying linear-algebra backend failure.
    #[error("linear algebra backend: {0}")]
    Backend(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Backend(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
