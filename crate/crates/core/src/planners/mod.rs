//! Trajectory planners: a certified backup planner that lands in the goal
//! set, and an informative candidate planner that excites the uncertain
//! drag parameters before rejoining the backup.

pub mod backup;
pub mod gramian;
pub mod informative;
pub mod lbfgs;
pub mod transcription;

pub use backup::plan_backup;
pub use informative::{plan_informative, InformativeOutcome};

use crate::dynamics::SystemModel;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Discretization, margins, penalty weights, and solver budgets shared by
/// both planners.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Integration substep inside each input segment (s).
    pub sub_dt: f64,
    /// Backup input-segment length (s); commit boundaries land on its knots.
    pub backup_seg: f64,
    /// Number of input segments in an informative candidate.
    pub cand_segments: usize,
    /// Switching-gain authority withheld when certifying the speed cap.
    pub speed_reserve: f64,
    /// Extra position clearance targeted during planning (m).
    pub plan_pos_margin: f64,
    /// Extra input clearance targeted during planning (m/s^2).
    pub plan_input_margin: f64,
    /// Gap kept below the certified nominal speed limit (m/s).
    pub speed_margin: f64,
    pub w_corridor: f64,
    pub w_obstacle: f64,
    pub w_speed: f64,
    pub w_goal: f64,
    pub w_term_vel: f64,
    /// Inner-solver iteration budget per outer round.
    pub max_iter: usize,
    pub tol_grad: f64,
    /// Outer rounds of penalty growth / multiplier updates.
    pub al_outer: usize,
    pub al_growth: f64,
    pub mu_rejoin0: f64,
    pub mu_exc0: f64,
    /// Per-component tolerance for rejoining the backup trajectory.
    pub rejoin_tol: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            sub_dt: 0.05,
            backup_seg: 0.5,
            cand_segments: 20,
            speed_reserve: 0.25,
            plan_pos_margin: 0.02,
            plan_input_margin: 1e-3,
            speed_margin: 0.02,
            w_corridor: 60.0,
            w_obstacle: 60.0,
            w_speed: 40.0,
            w_goal: 60.0,
            w_term_vel: 2.0,
            max_iter: 140,
            tol_grad: 3e-6,
            al_outer: 6,
            al_growth: 8.0,
            mu_rejoin0: 100.0,
            mu_exc0: 50.0,
            rejoin_tol: 1e-4,
        }
    }
}

/// Excitation shaping for informative candidates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateConfig {
    /// Effort-regularization weight of the candidate objective.
    pub rho: f64,
    /// Weight of the log-det excitation reward.
    pub gamma: f64,
    /// Required smallest eigenvalue of the excitation Gramian.
    pub alpha_exc: f64,
    /// Gramian regularization inside the log-det.
    pub eta: f64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            rho: 1.0,
            gamma: 5.0,
            alpha_exc: 0.5,
            eta: 1e-9,
        }
    }
}

/// Input that exactly cancels gravity; the zero-cost reference command.
pub fn hover_input(model: &SystemModel) -> Vector3<f64> {
    -model.gravity
}
