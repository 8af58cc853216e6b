use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph has {nodes} nodes but the padded size is {max}")]
    GraphTooLarge { nodes: usize, max: usize },

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("{path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("plot: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::SizeMismatch(msg.into()))
}
