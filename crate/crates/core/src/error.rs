use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input outside the domain of an operation (bad Likert value, non-positive baseline, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed request or payload.
    #[error("validation error: {0}")]
    Validation(String),

    /// Session event not legal in the current state.
    #[error("sequencing error: {0}")]
    Sequencing(String),

    /// Duplicate selection, double finalization, second session on a date.
    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("enrollment error: {0}")]
    Enrollment(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Validation(e.to_string())
    }
}
