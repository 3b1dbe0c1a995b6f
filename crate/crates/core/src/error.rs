use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unknown playing-technique label {label:?}; expected one of: {expected}")]
    UnknownLabel { label: String, expected: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint incompatible: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("audio decode failed for {}: {message}", path.display())]
    Audio { path: PathBuf, message: String },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short category used by the command line for exit messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::UnknownLabel { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Shape(_) => "shape",
            Error::Config { .. } => "config",
            Error::Numeric(_) => "numeric",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } | Error::Audio { .. } => "io",
            Error::Serde(_) => "serialization",
        }
    }
}
