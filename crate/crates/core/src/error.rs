use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}, line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{0}: no triples found")]
    EmptyInput(String),

    #[error("unknown {kind} label '{label}'")]
    UnknownLabel { kind: &'static str, label: String },

    #[error("{kind} id {id} out of range (vocabulary size {size})")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        size: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("cannot corrupt triples: the entity vocabulary has fewer than two entities")]
    VocabularyTooSmall,

    #[error("empty human set: the bias score averages over at least one human")]
    NoHumans,

    #[error("non-finite loss {loss} at epoch {epoch} on triple ({head}, {relation}, {tail})")]
    NonFiniteLoss {
        epoch: usize,
        loss: f64,
        head: String,
        relation: String,
        tail: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
