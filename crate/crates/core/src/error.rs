use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input descriptor.
    #[error("config error: {0}")]
    Config(String),
    /// Input parsed fine but fails a mathematical precondition.
    #[error("validation rejected: {0}")]
    Rejected(String),
    /// A numerical procedure did not reach its tolerance.
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Rejected(_) => 2,
            Error::Numeric(_) => 3,
            Error::Config(_) | Error::Json(_) | Error::Csv(_) | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn rejected<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Rejected(msg.into()))
}

pub(crate) fn numeric<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numeric(msg.into()))
}
