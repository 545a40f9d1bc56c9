use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error in {path} at row {row}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("cannot render template: unresolved placeholder {0}")]
    Render(String),

    #[error("backend `{backend}` failed: {reason}")]
    Backend { backend: String, reason: String },

    #[error("backend `{backend}` sent a malformed reply: {reason}")]
    Protocol { backend: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("calibration failed for `{lf}`: {reason}")]
    Calibration { lf: String, reason: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Training { epoch: usize, batch: usize },

    #[error("stage `{stage}` failed: {reason}")]
    Stage { stage: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// True for failures caused by an exhausted, unreachable or misbehaving
    /// backend.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Backend { .. } | Error::Protocol { .. } | Error::Calibration { .. }
        )
    }
}
