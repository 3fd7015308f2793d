use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GaudaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GaudaError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("numeric failure at step {step}: {context}")]
    NumericFailure { step: usize, context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing prerequisite artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GaudaError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        GaudaError::InvalidArgument(msg.into())
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            GaudaError::Config(_) | GaudaError::Json(_) | GaudaError::InvalidArgument(_) => 2,
            GaudaError::NonFinite(_)
            | GaudaError::NumericFailure { .. }
            | GaudaError::ShapeMismatch { .. } => 3,
            GaudaError::MissingArtifact(_) => 4,
            GaudaError::Format(_) | GaudaError::Io(_) => 1,
        }
    }
}
