use std::fmt;

use serde::{Deserialize, Serialize};

/// Which sign class of a level-set field a condition refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Negative,
    Positive,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sign::Negative => f.write_str("negative"),
            Sign::Positive => f.write_str("positive"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry mismatch between operands")]
    GeometryMismatch,

    #[error("field is not 1-Lipschitz: cells {a} and {b} violate the bound by {excess:e}")]
    NotLipschitz { a: usize, b: usize, excess: f64 },

    #[error("theta must lie in (0, 1], got {0}")]
    BadTheta(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("the {0} sign class is empty")]
    Extinct(Sign),

    #[error("fewer than two phases remain")]
    PhasesExhausted,

    #[error("operation requires dimension {expected}, field has dimension {found}")]
    WrongDimension { expected: usize, found: usize },

    #[error("hypothesis violated: eps = {eps} exceeds R/8 = {limit}")]
    HypothesisViolated { eps: f64, limit: f64 },

    #[error("discrete comparison inequality violated at cell {cell} by {excess:e}")]
    InequalityViolated { cell: usize, excess: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
