//! Error type shared across the toolkit.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes surfaced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A physical parameter violated its validity constraint.
    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// A frequency grid failed a structural check.
    #[error("frequency grid: {reason}")]
    InvalidGrid { reason: String },

    /// A tabulated curve was queried outside its frequency span.
    #[error("no curve value at {frequency_hz} Hz: curve covers {start_hz} Hz to {stop_hz} Hz")]
    CurveGap {
        frequency_hz: f64,
        start_hz: f64,
        stop_hz: f64,
    },

    /// A sweep band was not covered by any configured band split.
    #[error("no band split covers {start_hz} Hz to {stop_hz} Hz")]
    BandGap { start_hz: f64, stop_hz: f64 },

    /// Two aligned containers disagreed on length.
    #[error("length mismatch: {name} has {actual} entries, expected {expected}")]
    LengthMismatch {
        name: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An experiment description could not be resolved into a runnable model.
    #[error("config error at {path}: {reason}")]
    Config { path: String, reason: String },

    /// A text table could not be parsed.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// A fit could not be set up or evaluated.
    #[error("fit: {reason}")]
    Fit { reason: String },

    /// A numerical routine failed to reach its accuracy target.
    #[error("numerical failure in {context}: {reason}")]
    Numerical {
        context: &'static str,
        reason: String,
    },

    /// An underlying I/O operation failed.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Builds the common parameter-validation error.
    pub fn invalid(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}
