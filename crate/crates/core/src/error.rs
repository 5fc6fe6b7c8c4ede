//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its allowed range. Names the offending field.
    #[error("invalid parameter `{field}`: {msg}")]
    Param { field: &'static str, msg: String },

    /// Trace file syntax error with a 1-based line number.
    #[error("trace parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A trace violated a data-model invariant on load.
    #[error("trace validation error for object {object_id}: {msg}")]
    Validation { object_id: u64, msg: String },

    /// Machine or model configuration is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called on inputs outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called in the wrong state (e.g. before calibration).
    #[error("state error: {0}")]
    State(String),

    /// The predictor was given an unusable calibration set.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Traffic or pixel accounting detected an impossible event (bug trap).
    #[error("accounting error: {0}")]
    Accounting(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
