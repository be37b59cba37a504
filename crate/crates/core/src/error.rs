use thiserror::Error;

/// Errors raised by the risk engine.
///
/// The variants map onto the CLI exit codes: argument problems are usage
/// errors, data problems are data errors, everything numeric is a
/// numeric/convergence error.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the mathematical domain of a function.
    #[error("domain error in {func}: {msg}")]
    Domain { func: &'static str, msg: String },

    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input data is malformed or physically impossible.
    #[error("data error{}: {msg}", location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    Data {
        location: Option<String>,
        msg: String,
    },

    /// Model calibration failed (non-PD matrix, degenerate sample, ...).
    #[error("calibration error: {0}")]
    Calibration(String),

    /// An iterative procedure did not converge.
    #[error("no convergence in {what} after {iterations} iterations (trace: {trace:?})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        trace: Vec<f64>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(func: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            func,
            msg: msg.into(),
        }
    }

    pub(crate) fn data(location: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Data {
            location: Some(location.into()),
            msg: msg.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
