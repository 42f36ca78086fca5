use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("positivity violated: no samples follow plan {0}")]
    Positivity(String),

    #[error("no labeled example within epsilon of outcome class {index} ({value:?})")]
    EmptyClass { index: usize, value: Vec<f64> },

    #[error("vertex sets overlap at vertex {0}")]
    Overlap(usize),

    #[error("cluster {cluster} has {size} vertices, exhaustive enumeration supports at most {max}")]
    ClusterTooLarge { cluster: usize, size: usize, max: usize },

    #[error("magnitude bound violated: |{what}| = {norm} > B = {bound}")]
    Magnitude { what: String, norm: f64, bound: f64 },

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("unknown weight scheme `{0}` (expected uniform, inv or sq_inv)")]
    UnknownScheme(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
