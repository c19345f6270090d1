use thiserror::Error;

/// Errors surfaced by the library. The CLI maps each family onto an exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid configuration or shape mismatch detected before any work starts.
    #[error("config error: {0}")]
    Config(String),
    /// A numerical routine failed to converge or diverged.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Training produced non-finite values.
    #[error("training error: {0}")]
    Training(String),
    /// The requested operation is not supported for this input.
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed file contents.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    }
}
