use std::path::PathBuf;

use thiserror::Error;

use crate::translation::EngineError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),

    /// A tag sequence violating BIOES; `position` is the first offending
    /// token, or the sequence length for an entity left open at the end.
    #[error("illegal tag sequence at position {position}{}", sentence.map(|s| format!(" in sentence {s}")).unwrap_or_default())]
    IllegalSequence {
        position: usize,
        sentence: Option<usize>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("training diverged at epoch {epoch}, step {step}: {what}")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        what: String,
    },

    #[error(transparent)]
    Engine(#[from] EngineError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {source}")]
    Json {
        what: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(what: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            what: what.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
