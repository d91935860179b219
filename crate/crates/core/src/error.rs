use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("id out of range: {id} (vocabulary size {size})")]
    IdOutOfRange { id: u32, size: usize },
    #[error("action/sequence length mismatch: {action} labels for {sequence} tokens")]
    LengthMismatch { action: usize, sequence: usize },
    #[error("undefined retention: original sequence is empty")]
    UndefinedRetention,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty reference continuation")]
    EmptyReference,
    #[error("degenerate policy ratio (log-ratio {log_ratio})")]
    DegeneratePolicyRatio { log_ratio: f64 },
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: field `{field}`: {message}")]
    CorruptCheckpoint { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
