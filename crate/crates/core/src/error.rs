use thiserror::Error;

use crate::control::ControlSequence;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("measure has empty support")]
    EmptySupport,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("covariance of mixture component {component} is not symmetric positive definite")]
    BadCovariance { component: usize },

    #[error("mixture specification invalid: {0}")]
    BadMixture(String),

    #[error("transport solver failed: {0}")]
    SolverFailure(String),

    #[error("residual capacity short by {remainder:e} of the requested mass")]
    CapacityShortfall { remainder: f64 },

    #[error("allocation of {allocated:e} at sample {sample} exceeds residual {residual:e}")]
    OverAllocation {
        sample: usize,
        allocated: f64,
        residual: f64,
    },

    #[error("local plan is empty")]
    EmptyPlan,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("pair (A, B) is not controllable: rank {rank} < {dim}")]
    NotControllable { rank: usize, dim: usize },

    #[error("horizon {horizon} shorter than state dimension {dim}")]
    HorizonTooShort { horizon: usize, dim: usize },

    #[error("controllability Gramian ill-conditioned (condition number {condition:e})")]
    GramianIllConditioned { condition: f64 },

    #[error("control penalty must be symmetric positive definite")]
    BadPenalty,

    #[error("descent did not converge after {iterations} iterations (stationarity residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Box<ControlSequence>,
    },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("invariant violated in cycle {cycle}: {detail}")]
    InvariantViolation { cycle: usize, detail: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse { .. } | Error::BadMixture(_) | Error::BadCovariance { .. } => 2,
            Error::InvariantViolation { .. } => 4,
            Error::Io(_) => 5,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_category() {
        assert_eq!(Error::config("gamma", "out of range").exit_code(), 2);
        assert_eq!(Error::BadCovariance { component: 1 }.exit_code(), 2);
        assert_eq!(Error::GramianIllConditioned { condition: 1e13 }.exit_code(), 3);
        assert_eq!(
            Error::InvariantViolation {
                cycle: 0,
                detail: String::new()
            }
            .exit_code(),
            4
        );
        assert_eq!(Error::from(std::io::Error::other("disk")).exit_code(), 5);
    }
}
