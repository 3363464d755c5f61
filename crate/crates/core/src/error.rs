use std::path::PathBuf;

use thiserror::Error;

use crate::llm::LlmError;
use crate::prompt::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Persistence {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("cannot build example: {0}")]
    Build(String),

    #[error("cannot assemble prompt: {0}")]
    Assembly(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error("object placement failed: {0}")]
    Placement(String),

    #[error("execution failed: {0}")]
    Execution(String),

    #[error("scripted expert failed: {0}")]
    Expert(String),

    #[error("success predicate: {0}")]
    Predicate(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
