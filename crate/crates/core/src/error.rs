use thiserror::Error;

pub type Result<T> = std::result::Result<T, BmsError>;

#[derive(Debug, Error)]
pub enum BmsError {
    #[error("time {t} outside [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("time {t} is at a singular endpoint")]
    SingularTime { t: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field parameters contain NaN")]
    PoisonedState,

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("training diverged; last finite loss {last_finite_loss}")]
    TrainingDivergence { last_finite_loss: f64 },

    #[error("{skipped} of {total} regression targets were non-finite")]
    DataQuality { skipped: usize, total: usize },

    #[error("unsupported coupling: {0}")]
    UnsupportedCoupling(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("control variate is degenerate (zero denominator)")]
    DegenerateVariate,

    #[error("all importance weights are zero")]
    DegenerateWeights,

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
