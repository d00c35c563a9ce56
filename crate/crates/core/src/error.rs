use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke a documented precondition (for example a non-unit beamformer).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The weighted posterior mass vanished; the update cannot be normalized.
    #[error("degenerate posterior update: all weighted likelihoods are zero")]
    DegenerateUpdate,

    /// The steering vectors of a query summed to (numerically) zero.
    #[error("linear weighted sum cancelled to zero for query {0:?}")]
    Cancellation(Vec<usize>),

    /// A network produced an all-zero vector, which cannot be projected to unit norm.
    #[error("network output is zero and cannot be normalized")]
    DegenerateOutput,

    #[error("no trained model for query size K={0}")]
    ModelNotFound(usize),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("model file {path:?}: {reason}")]
    ModelFormat { path: PathBuf, reason: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
