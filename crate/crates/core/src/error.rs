use thiserror::Error;

/// Errors produced by the numeric core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training error at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("solver error at iteration {iteration}: {reason}")]
    Solver { iteration: usize, reason: String },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
