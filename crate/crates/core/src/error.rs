use alloc::string::String;

/// Errors reported by the integrator core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimensions of two coupled objects disagree.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    /// A computation produced non-finite values or failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = core::result::Result<T, Error>;
