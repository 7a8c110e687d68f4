use std::io;

use thiserror::Error;

/// Errors raised by the simulation, correlation and fitting routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("photon stream invariant violated: {0}")]
    InvalidStream(String),

    #[error("normalization is undefined: {0}")]
    Normalization(String),

    #[error("fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("fit is degenerate: {0}")]
    Degenerate(String),

    #[error("stream file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Checks that `value` is finite and satisfies `ok`, otherwise reports `reason`.
pub(crate) fn check(name: &'static str, value: f64, ok: bool, reason: &str) -> Result<()> {
    if value.is_finite() && ok {
        Ok(())
    } else {
        Err(invalid(name, format!("{reason} (got {value})")))
    }
}
