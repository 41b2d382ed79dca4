use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter failed a domain check (negative rate, non-positive Q, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// The integrator step does not resolve the fastest timescale of the frame.
    #[error("step {dt:e} s does not resolve the {frame} frame (requires dt <= {max_dt:e} s)")]
    Resolution { frame: &'static str, dt: f64, max_dt: f64 },

    #[error("non-finite state at t = {t:e} s: {detail}")]
    NonFinite { t: f64, detail: String },

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },

    #[error("segment {index}: {message}")]
    Semantic { index: usize, message: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("no oscillation detected")]
    NoOscillation,

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Resolution { .. }
            | Error::Syntax { .. }
            | Error::Semantic { .. }
            | Error::Singular(_) => 2,
            Error::Convergence(_) | Error::NonFinite { .. } | Error::NoOscillation => 3,
            Error::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
