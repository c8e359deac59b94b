use thiserror::Error;

/// Errors raised by the numerical core.
///
/// Variants are tagged by the subsystem that produced them so the CLI can
/// report `[module] message` lines without extra bookkeeping.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("[dynamics] {0}")]
    Dynamics(String),

    #[error("[odesolve] non-finite state at t = {time}")]
    BlowUp { time: f64 },

    #[error("[odesolve] {0}")]
    Solver(String),

    #[error("[nn] dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("[nn] {0}")]
    Network(String),

    #[error("[metrics] {0}")]
    Metric(String),

    #[error("[metrics] undefined MRE: every reference entry is below the zero guard")]
    UndefinedMre,

    #[error("[training] {0}")]
    Training(String),

    #[error("[training] non-finite adjoint at t = {time}")]
    AdjointBlowUp { time: f64 },

    #[error("[analogue] {0}")]
    Analogue(String),

    #[error("[baselines] {0}")]
    Baseline(String),

    #[error("[projection] {0}")]
    Projection(String),

    #[error("[io] {0}")]
    Io(String),

    #[error("[format] {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short module tag, as printed in brackets.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Dynamics(_) => "dynamics",
            Error::BlowUp { .. } | Error::Solver(_) => "odesolve",
            Error::Dimension { .. } | Error::Network(_) => "nn",
            Error::Metric(_) | Error::UndefinedMre => "metrics",
            Error::Training(_) | Error::AdjointBlowUp { .. } => "training",
            Error::Analogue(_) => "analogue",
            Error::Baseline(_) => "baselines",
            Error::Projection(_) => "projection",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
