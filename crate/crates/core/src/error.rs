use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension {0}: need N >= 2")]
    InvalidDimension(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("QBER undefined: no {0} events")]
    UndefinedQber(&'static str),

    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),

    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code used by the command-line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::InvalidDimension(_) | Error::Domain(_) | Error::UndefinedQber(_) => 2,
            Error::InsufficientStatistics(_) => 3,
        }
    }
}
