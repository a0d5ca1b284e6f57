use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("not enough sequences: need {needed}, have {available}")]
    NotEnoughData { needed: usize, available: usize },

    #[error("vocabulary mismatch: expected {expected}, got {actual}")]
    VocabMismatch { expected: usize, actual: usize },

    #[error("remote model unavailable: {0}")]
    RemoteUnavailable(String),

    #[error("protocol error: {0}")]
    ProtocolError(String),

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("batch of {0} rows is too small for batch normalization in train mode")]
    BatchTooSmall(usize),

    #[error("activation cache does not match the network state")]
    CacheMismatch,

    #[error("renormalization constant {0:e} is too small")]
    DegenerateRenormalization(f64),

    #[error("combination kind `{0}` has no input-dependent weight")]
    NoLambda(&'static str),

    #[error("distribution cache is empty")]
    EmptyCache,

    #[error("nothing to evaluate")]
    EmptyEval,

    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("experiment spec key `{key}`: {source}")]
    SpecInput {
        key: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Data and protocol failures, as opposed to usage mistakes.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidArgument(_))
    }
}
