use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("empty sequence")]
    EmptySequence,
    #[error("backward called before a forward pass")]
    BackwardBeforeForward,
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
