use thiserror::Error;

use fiberwatch_nn::NnError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid fiber plan: {0}")]
    InvalidPlan(String),
    #[error("events at samples {first} and {second} overlap within one pulse width ({pulse} samples)")]
    OverlappingEvents {
        first: usize,
        second: usize,
        pulse: usize,
    },
    #[error("trace already carries noise at {0} dB; re-noising is not allowed")]
    AlreadyNoisy(f64),
    #[error("target SNR must be finite or +inf, got {0}")]
    InvalidSnr(f64),
    #[error("trace has {found} samples, need at least {needed}")]
    TraceTooShort { found: usize, needed: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dataset format version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: String, expected: String },
    #[error("malformed dataset at line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("training data contains a {found} sequence; {expected}")]
    WrongLabel { found: String, expected: &'static str },
    #[error("validation set must contain both normal and fault samples")]
    SingleClass,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("model kind mismatch: file is `{found}`, expected `{expected}`")]
    ModelKind { found: String, expected: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
