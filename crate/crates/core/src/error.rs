use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path} is not valid UTF-8")]
    InvalidUtf8 { path: PathBuf },

    #[error("document {0} is empty after normalization")]
    EmptyDocument(String),

    #[error("document {id} has {tokens} tokens, shorter than one chunk of {chunk_len}")]
    DocumentTooShort {
        id: String,
        tokens: usize,
        chunk_len: usize,
    },

    #[error("invalid chunk config: prompt_len={prompt_len}, chunk_len={chunk_len}")]
    InvalidChunkConfig { chunk_len: usize, prompt_len: usize },

    #[error("book id {0} appears in both forget and retain sets")]
    IdCollision(String),

    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),

    #[error("sequence of length {len} exceeds context length {context_len}")]
    SequenceTooLong { len: usize, context_len: usize },

    #[error("token id {token} out of range for vocab size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("segment tables differ")]
    SegmentMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite loss ({0})")]
    NonFiniteLoss(f64),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("divergence at step {step}: loss {loss} vs initial {initial}")]
    Diverged { step: usize, loss: f64, initial: f64 },

    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),

    #[error("checkpoint digest mismatch")]
    DigestMismatch,

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
