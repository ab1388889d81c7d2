use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-stationary parameters: {0}")]
    NonStationary(String),

    #[error("ambiguous: {0}")]
    Ambiguous(String),

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    /// The robust recursion left the representable range. `last_stable_time`
    /// is the end of the last step that completed.
    #[error("instability at t={time}: condition_log={condition_log:.3} (last stable t={last_stable_time})")]
    Instability {
        time: f64,
        last_stable_time: f64,
        condition_log: f64,
    },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidState(_) => "invalid-state",
            Error::Unsupported(_) => "unsupported",
            Error::NonStationary(_) => "non-stationary",
            Error::Ambiguous(_) => "ambiguous",
            Error::DegeneratePosterior(_) => "degenerate-posterior",
            Error::Instability { .. } => "instability",
            Error::Optimizer(_) => "optimizer",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 1 for input problems, 2 for numerical diagnostics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidState(_)
            | Error::DegeneratePosterior(_)
            | Error::Instability { .. }
            | Error::Optimizer(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
