//! Commit logic for the dual-control loop.
//!
//! At each decision time the controller refreshes its safe backup plan, builds
//! one conservative/informative candidate pair per commit horizon, prices each
//! informative candidate by its predicted identification gain, and commits the
//! best certified candidate that fits the remaining cost budget.  When nothing
//! qualifies it falls back to the shortest conservative slice of the backup,
//! so a safe committed trajectory always exists.

use nalgebra::DMatrix;

use crate::dynamics::{ParameterBox, State, SystemModel};
use crate::error::Error;
use crate::planners::{
    hover_input, plan_backup, plan_informative, CandidateConfig, InformativeOutcome, PlannerConfig,
};
use crate::trajectory::{trajectory_cost, NominalTrajectory, DENSE_DT};
use crate::tubes::{validate_tube, AncillaryGains, MissionSpec, TubeOutcome, TubeTrajectory};
use crate::widthlp::{avg_width_reduction, axis_directions, StackedRegressor};

/// Tolerance for the time arithmetic that enumerates commit horizons.
const TIME_TOL: f64 = 1e-9;

/// Margin by which a freshly planned backup must beat the previous one
/// (restricted to the remaining window) before it replaces it.
const BACKUP_IMPROVEMENT_TOL: f64 = 1e-6;

/// Running cost accounts for the budget test.
///
/// `j_exec` is the cost accrued by the executed trajectory so far (owned by
/// the simulation harness), `j_back` is the cost-to-go of the current backup
/// plan, and `budget` is the total allowance for the mission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetLedger {
    pub j_exec: f64,
    pub j_back: f64,
    pub budget: f64,
}

impl BudgetLedger {
    pub fn new(budget: f64) -> Self {
        BudgetLedger {
            j_exec: 0.0,
            j_back: 0.0,
            budget,
        }
    }

    /// Whether committing a candidate with extra cost `delta_j` keeps the
    /// worst-case mission total within budget.
    pub fn admits(&self, delta_j: f64) -> bool {
        self.j_exec + self.j_back + delta_j <= self.budget
    }

    /// Budget remaining beyond the committed-plus-backup cost.
    pub fn headroom(&self) -> f64 {
        self.budget - self.j_exec - self.j_back
    }
}

/// One commit horizon's candidate pair.
///
/// The conservative member is always present (a slice of the backup).  The
/// informative member is absent when its planner failed or declined, and its
/// tube certificate is absent when validation rejected the planned trajectory.
#[derive(Debug, Clone)]
pub struct CandidatePair {
    /// 1-based horizon index; the horizon is `index * t_commit`.
    pub index: usize,
    pub horizon: f64,
    pub conservative: TubeTrajectory,
    pub informative: Option<NominalTrajectory>,
    pub informative_tube: Option<TubeTrajectory>,
    /// Discounted information gain `exp(-lambda * horizon) * delta_w`.
    pub score: f64,
    /// Predicted average shrink of the parameter-box widths.
    pub delta_w: f64,
    /// Extra cost of the informative candidate over the conservative one.
    pub delta_j: f64,
}

impl CandidatePair {
    /// An informative candidate is committable only once its tube certificate
    /// exists.
    pub fn is_valid(&self) -> bool {
        self.informative_tube.is_some()
    }
}

/// What kind of trajectory was committed for the next interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitKind {
    /// A certified informative candidate (1-based horizon index).
    Informative { index: usize },
    /// No candidate qualified; execute the shortest backup slice.
    ConservativeFallback,
    /// No commit horizon fits before the mission deadline; ride the backup
    /// to the end.
    TerminalPhase,
}

impl CommitKind {
    pub fn label(&self) -> &'static str {
        match self {
            CommitKind::Informative { .. } => "informative",
            CommitKind::ConservativeFallback => "conservative",
            CommitKind::TerminalPhase => "terminal",
        }
    }
}

/// The committed trajectory plus the bookkeeping the harness logs.
#[derive(Debug, Clone)]
pub struct Commitment {
    pub kind: CommitKind,
    pub tube: TubeTrajectory,
    pub horizon: f64,
    pub score: f64,
    pub delta_w: f64,
    pub delta_j: f64,
}

impl Commitment {
    /// Decision time of the next cycle.
    pub fn next_decision_time(&self) -> f64 {
        self.tube.start_time() + self.horizon
    }
}

/// Everything produced by one decision cycle.
#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub commitment: Commitment,
    pub pairs: Vec<CandidatePair>,
    pub backup: TubeTrajectory,
    pub j_back: f64,
}

/// Commit horizons available at decision time `t_k`: every multiple of the
/// commit interval that still fits before `t_f`.
pub fn horizons(t_k: f64, t_f: f64, t_c: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = 1usize;
    while t_k + i as f64 * t_c <= t_f + TIME_TOL {
        out.push(i as f64 * t_c);
        i += 1;
    }
    out
}

/// Discounted information score: short horizons are preferred unless a longer
/// one buys substantially more shrink.
pub fn score(horizon: f64, delta_w: f64, lambda: f64) -> f64 {
    (-lambda * horizon).exp() * delta_w
}

/// Positions (into `pairs`) of certified candidates whose extra cost fits the
/// remaining budget.
pub fn budget_filter(pairs: &[CandidatePair], ledger: &BudgetLedger) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_valid() && ledger.admits(p.delta_j))
        .map(|(i, _)| i)
        .collect()
}

/// Pick what to commit from the candidate pairs.
///
/// The highest-scoring certified, budget-feasible informative candidate wins;
/// ties go to the shorter horizon.  A candidate with zero predicted gain still
/// commits -- exploration stops rewarding itself once the parameter box has
/// collapsed, and the cheapest informative plan is then as good as the backup.
/// With no qualifying candidate the shortest conservative slice is committed,
/// and with no horizons at all the caller stays on the backup to the end.
pub fn commit(
    pairs: &[CandidatePair],
    ledger: &BudgetLedger,
    backup: &TubeTrajectory,
    t_k: f64,
) -> Commitment {
    if pairs.is_empty() {
        return Commitment {
            kind: CommitKind::TerminalPhase,
            tube: backup.clone(),
            horizon: backup.end_time() - t_k,
            score: 0.0,
            delta_w: 0.0,
            delta_j: 0.0,
        };
    }
    let feasible = budget_filter(pairs, ledger);
    let mut best: Option<&CandidatePair> = None;
    for &i in &feasible {
        let p = &pairs[i];
        // Strict improvement keeps the earlier (shorter-horizon) candidate on
        // ties; `pairs` is ordered by horizon.
        if best.map_or(true, |b| p.score > b.score) {
            best = Some(p);
        }
    }
    match best {
        Some(p) => Commitment {
            kind: CommitKind::Informative { index: p.index },
            tube: p
                .informative_tube
                .clone()
                .expect("budget filter only passes certified candidates"),
            horizon: p.horizon,
            score: p.score,
            delta_w: p.delta_w,
            delta_j: p.delta_j,
        },
        None => Commitment {
            kind: CommitKind::ConservativeFallback,
            tube: pairs[0].conservative.clone(),
            horizon: pairs[0].horizon,
            score: 0.0,
            delta_w: 0.0,
            delta_j: 0.0,
        },
    }
}

/// The decision-cycle driver: owns the mission description and planner
/// configuration, and turns (parameter box, anchor state, time) into a
/// committed tube trajectory.
#[derive(Debug, Clone)]
pub struct Gatekeeper {
    pub model: SystemModel,
    pub spec: MissionSpec,
    pub gains: AncillaryGains,
    pub planner: PlannerConfig,
    pub candidate: CandidateConfig,
    /// Discount rate of the horizon score.
    pub lambda_score: f64,
    /// Measurement cadence assumed when predicting identification gain.
    pub dt_sample: f64,
}

impl Gatekeeper {
    pub fn new(
        model: SystemModel,
        spec: MissionSpec,
        gains: AncillaryGains,
        planner: PlannerConfig,
        candidate: CandidateConfig,
    ) -> Self {
        Gatekeeper {
            model,
            spec,
            gains,
            planner,
            candidate,
            lambda_score: 0.5,
            dt_sample: 0.1,
        }
    }

    /// Cost-to-go of a nominal trajectory under the mission weights.
    pub fn cost_of(&self, nominal: &NominalTrajectory) -> f64 {
        let dense = nominal.dense(&self.model, DENSE_DT);
        trajectory_cost(
            &dense,
            &self.spec.weights,
            &self.spec.goal.center(),
            &hover_input(&self.model),
        )
        .total()
    }

    /// Re-plan the backup from `anchor` over `[t_k, t_f]` and keep whichever
    /// of {fresh plans, previous backup restricted to the window} costs less.
    ///
    /// Two fresh plans are attempted: one warm-started from the trimmed
    /// previous backup and one from hover.  The warm start preserves a good
    /// profile across small box changes, but keeps the optimizer in the old
    /// slow basin after the box shrinks a lot; the cold start escapes it.
    ///
    /// Keeping the restriction of a previously certified backup is always
    /// sound, so a planning failure degrades gracefully whenever a previous
    /// backup exists; the error propagates only on the very first plan.
    /// Returns the backup and its cost-to-go.
    pub fn refresh_backup(
        &self,
        theta_box: &ParameterBox,
        anchor: State,
        t_k: f64,
        previous: Option<&TubeTrajectory>,
    ) -> Result<(TubeTrajectory, f64), Error> {
        let trimmed = match previous {
            Some(prev) => Some(prev.restrict(t_k, self.spec.t_final)?),
            None => None,
        };
        let plan = |warm: Option<&NominalTrajectory>| {
            plan_backup(
                &self.model,
                &self.spec,
                &self.gains,
                theta_box,
                &self.planner,
                anchor,
                t_k,
                warm,
            )
        };
        let mut fresh: Option<(TubeTrajectory, f64)> = None;
        let mut first_err: Option<Error> = None;
        let warm_starts = [trimmed.as_ref().map(|t| &t.nominal), None];
        let attempts = if trimmed.is_some() { 2 } else { 1 };
        for warm in warm_starts.into_iter().take(attempts) {
            match plan(warm) {
                Ok(tube) => {
                    let j = self.cost_of(&tube.nominal);
                    if fresh.as_ref().map_or(true, |(_, best)| j < *best) {
                        fresh = Some((tube, j));
                    }
                }
                Err(err) => {
                    if first_err.is_none() {
                        first_err = Some(err);
                    }
                }
            }
        }
        match fresh {
            Some((tube, j_fresh)) => {
                if let Some(prev_trim) = trimmed {
                    let j_prev = self.cost_of(&prev_trim.nominal);
                    if j_fresh > j_prev + BACKUP_IMPROVEMENT_TOL {
                        return Ok((prev_trim, j_prev));
                    }
                }
                Ok((tube, j_fresh))
            }
            None => match trimmed {
                Some(prev_trim) => {
                    let j_prev = self.cost_of(&prev_trim.nominal);
                    Ok((prev_trim, j_prev))
                }
                None => Err(first_err.expect("no fresh plan implies an error")),
            },
        }
    }

    /// Regressor stack the width predictor assumes: one measurement at every
    /// sampling-cadence tick along the planned trajectory (the start state is
    /// excluded; it is shared by all candidates).
    pub fn planned_stack(&self, nominal: &NominalTrajectory) -> Result<StackedRegressor, Error> {
        // Densify at the planner substep, then pick every state that lands on
        // a measurement instant; the cadence may be coarser than a knot.
        let dense = nominal.dense(&self.model, self.planner.sub_dt);
        let stride = (self.dt_sample / dense.dt).round().max(1.0) as usize;
        let mut regressors: Vec<DMatrix<f64>> = Vec::new();
        let mut times = Vec::new();
        let mut m = stride;
        while m <= dense.steps() {
            regressors.push(self.model.regressor_matrix(&dense.states[m].vel));
            times.push(dense.time(m));
            m += stride;
        }
        StackedRegressor::stack(&regressors, self.model.meas_bound, times)
    }

    /// Predicted average width reduction if measurements are taken along the
    /// planned trajectory at the sampling cadence.
    pub fn predicted_width_gain(
        &self,
        theta_box: &ParameterBox,
        nominal: &NominalTrajectory,
    ) -> Result<f64, Error> {
        let stack = self.planned_stack(nominal)?;
        let directions = axis_directions(self.model.param_dim());
        avg_width_reduction(theta_box, &stack, &directions)
    }

    /// Build the candidate pair for one commit horizon.  The conservative
    /// member is the backup slice; the informative member is planned, tube-
    /// certified, and priced.  Planner or certificate failures leave the pair
    /// conservative-only rather than aborting the cycle.
    fn build_pair(
        &self,
        theta_box: &ParameterBox,
        backup: &TubeTrajectory,
        t_k: f64,
        index: usize,
        horizon: f64,
    ) -> Result<CandidatePair, Error> {
        let conservative = backup.restrict(t_k, t_k + horizon)?;
        let mut pair = CandidatePair {
            index,
            horizon,
            conservative,
            informative: None,
            informative_tube: None,
            score: 0.0,
            delta_w: 0.0,
            delta_j: 0.0,
        };
        let planned = match plan_informative(
            &self.model,
            &self.spec,
            &self.gains,
            theta_box,
            &self.planner,
            &self.candidate,
            backup,
            t_k,
            horizon,
        ) {
            Ok(InformativeOutcome::Planned(nominal)) => nominal,
            Ok(InformativeOutcome::ExcitationInfeasible { .. }) | Err(_) => return Ok(pair),
        };
        let tube = match validate_tube(
            &planned,
            &self.model,
            theta_box,
            &self.spec,
            &self.gains,
            self.model.disturbance_bound,
            false,
        ) {
            TubeOutcome::Valid(tube) => Some(tube),
            TubeOutcome::Violation(v) => {
                if std::env::var_os("PLANNER_TRACE").is_some() {
                    eprintln!(
                        "candidate {index} (T = {horizon}): tube rejected, {} at t = {:.2}",
                        v.what, v.time
                    );
                }
                None
            }
        };
        pair.delta_j = self.cost_of(&planned) - self.cost_of(&pair.conservative.nominal);
        pair.delta_w = self.predicted_width_gain(theta_box, &planned)?;
        pair.score = score(horizon, pair.delta_w, self.lambda_score);
        pair.informative = Some(planned);
        pair.informative_tube = tube;
        Ok(pair)
    }

    /// Run one full decision cycle at time `t_k`.
    ///
    /// Refreshes the backup (updating `ledger.j_back`), builds the candidate
    /// pairs, and commits.  `ledger.j_exec` is left untouched; the harness
    /// owns it.
    pub fn cycle(
        &self,
        theta_box: &ParameterBox,
        anchor: State,
        t_k: f64,
        previous_backup: Option<&TubeTrajectory>,
        ledger: &mut BudgetLedger,
    ) -> Result<CycleOutcome, Error> {
        let (backup, j_back) = self.refresh_backup(theta_box, anchor, t_k, previous_backup)?;
        ledger.j_back = j_back;
        let mut pairs = Vec::new();
        for (i, horizon) in horizons(t_k, self.spec.t_final, self.spec.t_commit)
            .into_iter()
            .enumerate()
        {
            pairs.push(self.build_pair(theta_box, &backup, t_k, i + 1, horizon)?);
        }
        let commitment = commit(&pairs, ledger, &backup, t_k);
        Ok(CycleOutcome {
            commitment,
            pairs,
            backup,
            j_back,
        })
    }
}
