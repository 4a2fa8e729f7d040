use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("gradient error: {0}")]
    Grad(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: invalid UTF-8")]
    Encoding { path: PathBuf, line: usize },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("unknown character in word(s): {}", .0.join(", "))]
    UnknownCharacter(Vec<String>),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
