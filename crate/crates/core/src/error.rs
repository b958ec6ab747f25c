use std::path::PathBuf;

/// Errors raised across the motion prior pipeline.
#[derive(Debug, thiserror::Error)]
pub enum VmpError {
    #[error("degenerate 6D rotation input: {0}")]
    DegenerateRotation(String),

    #[error("not a rotation matrix: {0}")]
    NotRotation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: String, expected: String },

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = VmpError> = std::result::Result<T, E>;

impl VmpError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        VmpError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            VmpError::DegenerateRotation(_) => "degenerate_rotation",
            VmpError::NotRotation(_) => "not_rotation",
            VmpError::Shape(_) => "shape",
            VmpError::Invalid(_) => "invalid",
            VmpError::Degenerate(_) => "degenerate",
            VmpError::MissingCheckpoint(_) => "missing_checkpoint",
            VmpError::Version { .. } => "version",
            VmpError::Parse { .. } => "parse",
            VmpError::NonFiniteLoss { .. } => "non_finite_loss",
            VmpError::Io { .. } => "io",
            VmpError::Tensor(_) => "tensor",
            VmpError::Json(_) => "json",
        }
    }
}
