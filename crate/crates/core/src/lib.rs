//! Safe dual-control trajectory planning.
//!
//! The crate closes the loop between four pieces: robust tube tracking of
//! nominal plans under bounded parameter uncertainty, set-membership
//! identification that shrinks the parameter box from bounded-noise
//! measurements, an LP-based prediction of how much a candidate trajectory
//! will shrink that box, and a commit layer that only executes exploratory
//! trajectories when they are certified safe and fit a mission cost budget.

pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod gatekeeper;
pub mod harness;
pub mod planners;
pub mod trajectory;
pub mod tubes;
pub mod widthlp;

pub use dynamics::{DragModel, ParameterBox, SimState, State, SystemModel};
pub use error::Error;
pub use estimation::{FeasiblePolytope, RegressorRecord};
pub use gatekeeper::{
    BudgetLedger, CandidatePair, CommitKind, Commitment, CycleOutcome, Gatekeeper,
};
pub use harness::{emit_reports, run_baseline, run_dual, RunConfig, RunReport};
pub use planners::{
    hover_input, plan_backup, plan_informative, CandidateConfig, InformativeOutcome, PlannerConfig,
};
pub use trajectory::{CostBreakdown, CostWeights, DenseTrajectory, NominalTrajectory};
pub use tubes::{AncillaryGains, Box3, MissionSpec, SafeSet, TubeTrajectory};
