//! Crate-wide error type.

use alloc::string::String;

/// Errors surfaced by the algorithmic core.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoreError {
    /// A precondition on operation inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Matrix shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A numeric routine produced a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    /// An iterative routine failed to converge or ran out of retries.
    #[error("{0}")]
    Iteration(String),
    /// Cryptographic failure (bad key material, domain violation, overflow).
    #[error("crypto: {0}")]
    Crypto(String),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidInput(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        CoreError::ShapeMismatch(msg.into())
    }

    pub fn crypto(msg: impl Into<String>) -> Self {
        CoreError::Crypto(msg.into())
    }
}

pub type CoreResult<T> = core::result::Result<T, CoreError>;
