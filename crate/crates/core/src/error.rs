use thiserror::Error;

/// Errors raised by the reservoir library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument was outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Sprint acquisition found no viable candidate.
    #[error("acquisition failed: no viable candidate among {probed} probed")]
    AcquisitionFailure { probed: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
