use thiserror::Error;

use crate::analysis::LineParams;

pub type Result<T, E = NvError> = std::result::Result<T, E>;

/// Errors produced anywhere in the signal chain or analysis.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NvError {
    #[error("invalid magnetic field: {0}")]
    InvalidField(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("reference channel has zero variance; cannot tune balance")]
    DegenerateReference,

    #[error("ENBW too wide: moving-average window of {window} samples is below the 4-sample minimum")]
    EnbwTooWide { window: usize },

    #[error("fixed-point overflow in {stage} stage (value needs more than {bits} bits)")]
    Overflow { stage: &'static str, bits: u32 },

    #[error("fit failed after {iterations} iterations (residual rms {residual_rms:.3e}): {reason}")]
    FitFailed {
        reason: String,
        iterations: usize,
        residual_rms: f64,
        last: Vec<LineParams>,
    },

    #[error("no zero crossing within {half_window} Hz of {around} Hz")]
    NoCrossing { around: f64, half_window: f64 },

    #[error("underdetermined field inversion: {0}")]
    Underdetermined(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl NvError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NvError::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        NvError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical machinery (fits, overflow) as
    /// opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            NvError::DegenerateReference
                | NvError::Overflow { .. }
                | NvError::FitFailed { .. }
                | NvError::NoCrossing { .. }
                | NvError::Numeric(_)
        )
    }
}

impl From<std::io::Error> for NvError {
    fn from(e: std::io::Error) -> Self {
        NvError::Io(e.to_string())
    }
}
