use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {location}: expected {expected}, got {actual}")]
    Shape {
        location: String,
        expected: usize,
        actual: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("free stream exhausted: {0}")]
    StreamExhausted(String),

    #[error("placebo refill underflow: need {needed} candidates ({classes} classes x K={k}), have {available}")]
    RefillUnderflow {
        needed: usize,
        available: usize,
        classes: usize,
        k: usize,
    },

    #[error("budget infeasible: {new_data} new-class samples cannot absorb removal of |U|+|P| = {removal}")]
    BudgetInfeasible { new_data: usize, removal: usize },

    #[error("class {class} has {available} samples, needs at least {required}")]
    ClassTooSmall {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed input {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the configuration or its inputs rather than by a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::MissingFile(_) | Error::Parse { .. } | Error::Json(_)
        )
    }

    pub(crate) fn shape(location: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            location: location.into(),
            expected,
            actual,
        }
    }
}
