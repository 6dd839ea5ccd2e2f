use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unusable chunk: {0}")]
    UnusableChunk(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss in chunk {chunk_id}")]
    NonFiniteLoss { chunk_id: String },

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("malformed csv {path}: {msg}")]
    MalformedCsv { path: String, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
