use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("evaluation produced a non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("scheduling error at slot {slot}, node {node}: {reason}")]
    Scheduling {
        slot: usize,
        node: usize,
        reason: String,
    },

    #[error("schedule infeasible: {rule}")]
    ScheduleInfeasible { rule: String },

    #[error("iterates diverged at slot {slot}")]
    Divergence { slot: usize },

    #[error("inner solver stopped after {iterations} iterations with residual {residual:e}")]
    InnerSolver { iterations: usize, residual: f64 },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
