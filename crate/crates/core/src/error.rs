use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite gradient from loss head {head}")]
    NonFiniteGradient { head: String },

    #[error("standard deviation must be positive and finite (index {index}, value {value})")]
    InvalidStd { index: usize, value: f64 },

    #[error("Monte-Carlo estimator needs at least one noise row")]
    EmptyNoise,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{attack} diverged at iteration {iteration}: {reason}")]
    AttackDiverged {
        attack: &'static str,
        iteration: usize,
        reason: String,
    },

    #[error("training diverged at step {step}: {reason}")]
    TrainingDiverged { step: usize, reason: String },

    #[error("could not place {what} after {attempts} rejection samples")]
    Placement { what: &'static str, attempts: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("field `{field}`: {reason}")]
    Field { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
