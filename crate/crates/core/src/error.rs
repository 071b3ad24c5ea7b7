use std::fmt;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The CLI maps these onto process exit codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// A model or experiment parameter violates one of its constraints.
    #[error("invalid specification: {field}: {reason}")]
    InvalidSpec { field: String, reason: String },

    /// A computation would exceed its configured work budget.
    #[error("budget refusal in {operation}: projected cost {projected:.3e} exceeds budget {budget:.3e}")]
    Budget {
        operation: &'static str,
        projected: f64,
        budget: f64,
    },

    /// Matrix entries contained NaN or infinity.
    #[error("matrix contains non-finite entries")]
    NonFinite,

    /// The top eigenvalue is not simple to the configured tolerance.
    #[error("degenerate top eigenvalue: relative gap {gap:.3e} below tolerance {tol:.1e}")]
    DegenerateTop { gap: f64, tol: f64 },

    /// A word, sentence or other combinatorial input failed validation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimension exceeds what a dense routine is allowed to handle.
    #[error("{operation} refused for n = {n}: dense limit is {limit}")]
    TooLarge {
        operation: &'static str,
        n: usize,
        limit: usize,
    },

    /// The eigensolver failed to converge.
    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl fmt::Display) -> Self {
        Error::InvalidSpec {
            field: field.into(),
            reason: reason.to_string(),
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for budget refusals, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec { .. } | Error::Config(_) | Error::Json(_) | Error::InvalidInput(_) => 2,
            Error::Budget { .. } | Error::TooLarge { .. } => 3,
            _ => 1,
        }
    }
}
