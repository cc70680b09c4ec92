use thiserror::Error;

/// Errors raised by the inference engine and its building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SvbError {
    #[error("non-finite value in `{op}`: {value}")]
    NonFinite { op: &'static str, value: f64 },

    #[error("domain error in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("batch size {batch_size} out of range for {n_total} data points")]
    BatchSize { batch_size: usize, n_total: usize },

    #[error("fit diverged at step {step}: {reason} (zeta = {zeta:?})")]
    Divergence {
        step: usize,
        reason: String,
        zeta: Vec<f64>,
    },

    #[error("grid posterior underflowed everywhere; widen or refine the grid around the data")]
    GridUnderflow,
}

pub type Result<T> = std::result::Result<T, SvbError>;
