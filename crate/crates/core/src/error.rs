use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("non-finite value: {0}")]
    NonFiniteInput(String),

    #[error("finite-difference oracle failed: f is not finite when perturbing coordinate {coordinate}")]
    OracleFailure { coordinate: usize },

    #[error("label error: {0}")]
    Label(String),

    #[error("invalid triplet ({anchor}, {positive}, {negative}): {reason}")]
    InvalidTriplet {
        anchor: usize,
        positive: usize,
        negative: usize,
        reason: String,
    },

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("schedule error: step {step} is outside 0..{total_steps}")]
    Schedule { step: usize, total_steps: usize },

    #[error("training diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
