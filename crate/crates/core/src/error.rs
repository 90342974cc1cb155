use thiserror::Error;

/// Error type shared by all modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Violated precondition or inconsistent input data.
    #[error("validation: {0}")]
    Validation(String),
    /// Malformed input file.
    #[error("{path}:{location}: {msg}")]
    Format {
        path: String,
        /// Line number for text formats, byte offset for binary ones.
        location: String,
        msg: String,
    },
    /// API misuse (e.g. backward without a retained forward).
    #[error("usage: {0}")]
    Usage(String),
    /// Non-finite values or an aborted numerical procedure.
    #[error("numerical: {0}")]
    Numerical(String),
    /// Checkpoint/config mismatch.
    #[error("incompatible: {0}")]
    Incompatible(String),
    /// Scene generation gave up after bounded retries.
    #[error("generation: {0}")]
    Generation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Process exit code: 1 validation, 2 numerical abort, 3 compatibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 2,
            Error::Incompatible(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
