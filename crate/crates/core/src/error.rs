use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate example id {id:?} (lines {first} and {second})")]
    DuplicateId { id: String, first: usize, second: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("phase discipline violation: {0}")]
    Phase(String),

    #[error("unknown token id {0}")]
    UnknownToken(u32),

    #[error("word {0:?} is not in the scorer vocabulary")]
    UnknownWord(String),

    #[error("no distribution for example {example:?} at prefix {prefix:?}")]
    MissingTable { example: String, prefix: Vec<u32> },

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("remote scorer: {0}")]
    Transport(String),

    #[error("remote scorer protocol violation: {0}")]
    Protocol(String),

    #[error("{0}")]
    Invalid(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the scoring backend itself (transport or protocol),
    /// as opposed to bad inputs or configuration.
    pub fn is_scorer_failure(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::Protocol(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
