//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("position ({x}, {y}) is outside the grid domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("loss is undefined: no non-empty target cells")]
    EmptyLoss,

    #[error("planning infeasible: {0}")]
    Infeasible(String),

    #[error("step budget exhausted after {cycles} replanning cycles")]
    Timeout {
        cycles: usize,
        /// Waypoints executed before the budget ran out.
        partial: Vec<crate::invasive::RobotState>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
