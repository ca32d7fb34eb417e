use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: non-finite value produced by {0}")]
    Numeric(&'static str),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("no path: {0}")]
    NoPath(String),
    #[error("vocab error: token {token} outside 1..{vocab}")]
    Vocab { token: usize, vocab: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("training diverged at step {step}: {what}")]
    Divergence { step: usize, what: String },
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short stable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Numeric(_) => "numeric",
            Error::Contract(_) => "contract",
            Error::NoPath(_) => "no_path",
            Error::Vocab { .. } => "vocab",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config { .. } => "config",
            Error::Divergence { .. } => "divergence",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
