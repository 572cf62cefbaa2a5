use thiserror::Error;

/// Errors raised anywhere in the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A primitive produced NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    /// A training loop produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),
    /// A checkpoint or image file is malformed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format { offset, message: msg.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
