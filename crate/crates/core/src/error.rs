use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MoilError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MoilError {
    #[error("{path}: row {row}, column `{column}`: {message}")]
    Load {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("period `{period}` is too short: {message}")]
    PeriodTooShort { period: String, message: String },

    #[error("segment group {group} has no candidate motifs; reduce n or the candidate window sizes")]
    EmptyGroup { group: usize },

    #[error("training diverged: {0}")]
    Training(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("missing artifact {path}: {message}")]
    MissingArtifact { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MoilError {
    /// Stable short identifier used by the CLI's machine-readable errors and
    /// the C status codes.
    pub fn kind(&self) -> &'static str {
        match self {
            MoilError::Load { .. } => "load",
            MoilError::Format { .. } => "format",
            MoilError::InvalidInput(_) => "invalid_input",
            MoilError::Config(_) => "config",
            MoilError::Shape(_) => "shape",
            MoilError::PeriodTooShort { .. } => "period_too_short",
            MoilError::EmptyGroup { .. } => "empty_group",
            MoilError::Training(_) => "training",
            MoilError::Integrity(_) => "integrity",
            MoilError::MissingArtifact { .. } => "missing_artifact",
            MoilError::Io(_) => "io",
            MoilError::Json(_) => "json",
            MoilError::Csv(_) => "csv",
        }
    }
}
