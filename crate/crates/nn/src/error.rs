use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requested for a node that is not on the tape")]
    TapeMissing,
    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),
    #[error("batch normalization needs batch size >= 2 in train mode, got {0}")]
    DegenerateBatch(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
