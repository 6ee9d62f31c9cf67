use std::path::PathBuf;

use crate::model::ReviewItem;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("engine is not configured with a scorer and cutoff")]
    Unconfigured,

    #[error("payload of {size} bytes exceeds the limit of {limit} bytes")]
    PayloadTooLarge { size: usize, limit: usize },

    #[error("unknown fragment {0}")]
    NotFound(String),

    #[error("fragment {} is already adjudicated differently", .0.fragment_id)]
    Conflict(Box<ReviewItem>),

    #[error("response {0} was already submitted with different text")]
    DuplicateResponse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("injected fault at {0:?}")]
    InjectedFault(crate::engine::FaultPoint),

    #[error("storage error on {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt log {path} at line {line}: {message}")]
    CorruptLog { path: PathBuf, line: usize, message: String },

    #[error(transparent)]
    Core(#[from] triage_core::Error),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Storage {
            path: path.into(),
            source,
        }
    }
}
