use thiserror::Error;

use crate::expr::{EvalError, ParseError};

/// Errors raised by measure, model and tensor computations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("integral diverges (level {level}): {evidence}")]
    DivergentIntegral { level: usize, evidence: String },

    #[error("zero denominator at {at}")]
    ZeroDenominator { at: String },

    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),

    #[error("sample spaces do not match: {0}")]
    SpaceMismatch(String),

    #[error("parameter {x:?} is outside the open parameter box")]
    OutOfDomain { x: Vec<f64> },

    #[error("density is not strictly positive ({value}) at {at}")]
    NonPositiveDensity { value: f64, at: String },

    #[error("kernel row {row} puts mass {mass} outside the fiber of its class")]
    SupportViolation { row: usize, mass: f64 },

    #[error("kernel row {0} is zero")]
    ZeroRow(usize),

    #[error("measure is not a probability measure (mass {0})")]
    NotProbability(f64),

    #[error("zero marginal at {at}")]
    ZeroMarginal { at: String },

    #[error("statistic is not sufficient (max deviation {deviation:e})")]
    NotSufficient { deviation: f64 },

    #[error("ill-conditioned fit in mass bin [{lo}, {hi}): {reason}")]
    IllConditioned { lo: f64, hi: f64, reason: String },

    #[error("function is not in the Orlicz space: no finite bracket up to a = {limit:e}")]
    NotInOrliczSpace { limit: f64 },

    #[error("metric is singular (smallest eigenvalue {min_eigenvalue:e} after damping)")]
    SingularMetric { min_eigenvalue: f64 },

    #[error("trajectory left the parameter domain: clipped {clipped} of {steps} steps")]
    LeftDomain { clipped: usize, steps: usize },

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
