use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("backward requires a 1x1 root, got {0}x{1}")]
    NonScalarRoot(usize, usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in parameter array {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite value in parameter array {0} after update")]
    NonFiniteParam(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
