use thiserror::Error;

/// Failure modes shared by every module.
///
/// `NotFound` is kept apart from the others because a search that runs out of
/// depth is a numerical outcome, not a malformed request.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
