use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SiganError {
    #[error("dataset layout: missing {path}")]
    DatasetLayout { path: PathBuf },

    #[error("unreadable images: {}", .files.iter().map(|(p, e)| format!("{} ({e})", p.display())).collect::<Vec<_>>().join(", "))]
    CorruptImages { files: Vec<(PathBuf, String)> },

    #[error("configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape { context: String, expected: String, actual: String },

    #[error("role mismatch: expected {expected}, got {actual}")]
    RoleMismatch { expected: String, actual: String },

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("feature extractor: {0}")]
    Extractor(String),

    #[error("numerical: {0}")]
    Numerical(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl SiganError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SiganError::Io { path: path.into(), source }
    }

    pub fn shape(context: impl Into<String>, expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        SiganError::Shape { context: context.into(), expected: format!("{expected:?}"), actual: format!("{actual:?}") }
    }

    /// Stable short identifier, used by the CLI for machine-readable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            SiganError::DatasetLayout { .. } => "dataset_layout",
            SiganError::CorruptImages { .. } => "corrupt_images",
            SiganError::Config(_) => "config",
            SiganError::Shape { .. } => "shape",
            SiganError::RoleMismatch { .. } => "role_mismatch",
            SiganError::NonFinite(_) => "non_finite",
            SiganError::Checkpoint(_) => "checkpoint",
            SiganError::Extractor(_) => "extractor",
            SiganError::Numerical(_) => "numerical",
            SiganError::Io { .. } => "io",
            SiganError::Json(_) => "json",
        }
    }
}

pub type Result<T, E = SiganError> = std::result::Result<T, E>;
