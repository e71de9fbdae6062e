use thiserror::Error;

/// Failure modes surfaced by the planning stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("measurement records are inconsistent with the noise bound (window records {records:?})")]
    InconsistentData { records: Vec<usize> },
    #[error("linear program solver failed: {0}")]
    SolverFailure(String),
    #[error("switching gain {gain} does not dominate mismatch plus disturbance {required}")]
    InvalidGains { gain: f64, required: f64 },
    #[error("constraint tightening leaves an empty {0}")]
    InfeasibleTightening(&'static str),
    #[error("trajectory optimization failed: {0}")]
    PlannerFailure(String),
    #[error("mission cannot be completed: {0}")]
    InfeasibleMission(String),
    #[error("safety violation at t={time:.3}: {what}")]
    SafetyViolation { time: f64, what: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SafetyViolation { .. } => 2,
            Error::InfeasibleTightening(_) | Error::InfeasibleMission(_) => 3,
            Error::SolverFailure(_) | Error::PlannerFailure(_) => 4,
            _ => 1,
        }
    }
}
