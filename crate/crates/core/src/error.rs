use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("tempo estimation failed: {0}")]
    EstimationFailed(String),

    #[error("clip too short: {0}")]
    TooShort(String),

    #[error("loop {0} has no active instance in the layout")]
    NoInstance(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undeterminable: {0}")]
    Undeterminable(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("failed to ingest {}: {reason}", path.display())]
    Ingest { path: PathBuf, reason: String },

    #[error("wav error in {}: {source}", path.display())]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record in {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeError(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::ShapeError(_)
            | Error::TooShort(_)
            | Error::Ingest { .. }
            | Error::Wav { .. }
            | Error::Format { .. } => 2,
            Error::InsufficientData(_) | Error::NoInstance(_) => 3,
            _ => 1,
        }
    }
}
