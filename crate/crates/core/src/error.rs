use std::path::PathBuf;

use thiserror::Error;

use crate::providers::ProviderError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    #[error("invalid template {name}: {detail}")]
    InvalidTemplate { name: String, detail: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("cosine of a zero vector")]
    ZeroVector,

    #[error("could not parse model output: {0}")]
    ParseFailure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid config at `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("manifest has no entries")]
    EmptyManifest,

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("both content and style parts are empty")]
    EmptyResult,

    #[error("unreadable image {path}: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
