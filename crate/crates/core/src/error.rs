use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("subset too small: {0}")]
    SubsetTooSmall(String),

    #[error("no computable terms: {0}")]
    NoComputableTerms(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("data error at row {row}: {msg}")]
    DataRow { row: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::DataRow { .. } | Error::Data(_) | Error::Io(_) | Error::Serde(_) => 3,
            Error::Dimension(_)
            | Error::DegenerateBatch(_)
            | Error::SubsetTooSmall(_)
            | Error::NoComputableTerms(_)
            | Error::Numeric(_) => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
