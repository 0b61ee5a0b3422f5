use std::fmt;

/// Process exit status for a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad configuration, arguments or input files.
    Validation,
    /// A failure while training, scoring or diagnosing.
    Inference,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Validation => 2,
            ExitKind::Inference => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub struct CliError {
    pub kind: ExitKind,
    #[source]
    pub error: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl CliError {
    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ExitKind::Validation,
            error: error.into(),
        }
    }

    pub fn inference(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ExitKind::Inference,
            error: error.into(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Tags a fallible result with the exit kind it maps to.
pub trait Classify<T> {
    fn validation(self, context: impl fmt::Display) -> CliResult<T>;
    fn inference(self, context: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn validation(self, context: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::validation(e.into().context(context.to_string())))
    }

    fn inference(self, context: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::inference(e.into().context(context.to_string())))
    }
}
