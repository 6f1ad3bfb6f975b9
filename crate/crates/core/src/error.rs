use thiserror::Error;

/// Errors produced by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    /// Vectors, step functions or partitions that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// An argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A random construction that has no valid next step.
    #[error("construction error: {0}")]
    Construction(String),

    /// The atomic grid is too coarse for the requested accuracy.
    #[error("resolution error: {message} (requires a grid of 2^{required_k} atoms)")]
    Resolution { message: String, required_k: u32 },

    /// A caller-supplied object violates a documented contract.
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn structural(msg: impl Into<String>) -> LabError {
    LabError::Structural(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> LabError {
    LabError::Domain(msg.into())
}
