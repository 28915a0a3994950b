use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty token sequence")]
    EmptySequence,

    #[error("token index {index} out of range for vocabulary of size {vocab_size}")]
    IndexOutOfRange { index: usize, vocab_size: usize },

    #[error("zero-norm encoding vector")]
    ZeroNorm,

    #[error("pool for query {query_id}: candidate {candidate_id} not found")]
    MissingCandidate { query_id: u64, candidate_id: u64 },

    #[error("vocabulary hash mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("model kind mismatch: expected {expected}, found {found}")]
    ModelKind { expected: String, found: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
