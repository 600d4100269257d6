use std::io;
use std::path::PathBuf;

use pixdial_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {msg}")]
    Conllu { line: usize, msg: String },

    #[error("invalid sentence: {0}")]
    InvalidSentence(String),

    #[error("glyph atlas: {0}")]
    Atlas(String),

    #[error("word {word:?} needs {needed} patches but at most {available} fit")]
    OversizedWord {
        word: String,
        needed: usize,
        available: usize,
    },

    #[error("mask: {0}")]
    Mask(String),

    #[error("label {label:?} is not in the frozen label set")]
    UnknownLabel { label: String },

    #[error("nothing to evaluate: {0}")]
    EmptyEval(String),

    #[error("data: {0}")]
    Data(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary: {0}")]
    Vocab(String),
}

/// Coarse failure classes, mapped to process exit codes by the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Tensor(e) if e.is_numeric() => ErrorKind::Numeric,
            Error::Config(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }
}
