use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its allowed domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data violates a structural requirement (unsorted, empty, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    /// The fitted amplitude leaves no probability mass in the physical region.
    #[error("non-physical result: {0}")]
    NonPhysical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
