use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema `{event_type}`: {reason}")]
    InvalidSchema { event_type: String, reason: String },

    #[error("cannot build split: {0}")]
    Split(String),

    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("event type mismatch: instance is `{instance}`, schema is `{schema}`")]
    TypeMismatch { instance: String, schema: String },

    #[error("unknown event type `{0}`")]
    UnknownEventType(String),

    #[error("instance of unseen event type `{0}` in seen training data")]
    UnseenTypeInTraining(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("sequence of {len} tokens exceeds the model context length of {limit}")]
    ContextLength { len: usize, limit: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("unaligned instance `{0}`")]
    Unaligned(String),

    #[error("token `{token}` of the target falls outside the allowed vocabulary")]
    MaskViolation { token: String },

    #[error("invalid config at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("missing artifact {path}: run `{stage}` first")]
    MissingPrerequisite { stage: &'static str, path: PathBuf },

    #[error("experiment directory {0} is locked by another process")]
    Locked(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn io_context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn io_context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Io {
            context: context(),
            source,
        })
    }
}
