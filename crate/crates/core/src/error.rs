use thiserror::Error;

/// Errors raised by the inference engine and its supporting modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbcError {
    /// A numeric argument falls outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller combined arguments in a way the operation does not support
    /// (dimension mismatches, missing inputs, too few draws).
    #[error("usage error: {0}")]
    Usage(String),

    /// A simulation or likelihood evaluation produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The auxiliary model fit did not reach a stationary point.
    #[error("auxiliary fit did not converge: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, AbcError>;

pub(crate) fn domain(msg: impl Into<String>) -> AbcError {
    AbcError::Domain(msg.into())
}

pub(crate) fn usage(msg: impl Into<String>) -> AbcError {
    AbcError::Usage(msg.into())
}
