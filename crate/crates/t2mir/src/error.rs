use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Batch composition cannot support the requested loss (e.g. a
    /// contrastive batch drawn from a single task).
    #[error("data composition error: {0}")]
    DataComposition(String),

    #[error("dataset generation error: {0}")]
    Generation(String),

    #[error("non-finite loss at step {step}: imitation={imitation} balance={balance} contrastive={contrastive} (lr={lr})")]
    NonFiniteLoss {
        step: usize,
        imitation: f64,
        balance: f64,
        contrastive: f64,
        lr: f64,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("refusing to overwrite existing output: {0} (pass --force)")]
    WouldClobber(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
