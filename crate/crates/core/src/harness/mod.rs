//! Closed-loop simulation: wires the dynamics, identification, planners, and
//! commit logic into complete missions, and reports costs, parameter bounds,
//! and safety outcomes.
//!
//! Two run modes share one executor.  `run_baseline` flies the initial
//! backup plan to the end without exploration or re-identification and
//! defines the 100 % cost reference.  `run_dual` runs the full decision
//! cycle: at each commit boundary it refreshes the backup, prices candidate
//! excitation trajectories, commits within the budget, tightens the
//! parameter box from the collected measurements, and repeats.

mod config;
mod report;

pub use config::{BoxConfig, RunConfig};
pub use report::{
    emit_reports, BoundsRecord, CommitRecord, RunReport, TrajectorySample, WidthCheck,
};

use std::time::Instant;

use nalgebra::Vector3;

use crate::dynamics::{measure_from_state, step, ParameterBox, SimState, SystemModel};
use crate::error::Error;
use crate::estimation::{FeasiblePolytope, RegressorRecord};
use crate::gatekeeper::{BudgetLedger, CommitKind, Gatekeeper};
use crate::planners::hover_input;
use crate::trajectory::step_cost;
use crate::tubes::{ancillary_control, AncillaryGains, MissionSpec, TubeTrajectory};
use crate::widthlp::{axis_directions, predicted_width};

/// Tolerance for the free-space monitor on executed states.
const SAFETY_TOL: f64 = 1e-9;

/// Tracks committed tubes step by step: accrues realized cost, logs the
/// executed trajectory, stages measurement records at the sampling cadence,
/// and aborts the mission on a free-space violation.
struct Executor<'a> {
    model: &'a SystemModel,
    spec: &'a MissionSpec,
    gains: &'a AncillaryGains,
    dt: f64,
    /// Execution steps between measurements.
    sample_every: usize,
    /// Replay planned states as executed ones instead of integrating the
    /// disturbed plant under the ancillary controller.
    strict: bool,
    /// Whether to stage measurement records at all (the baseline does not).
    collect: bool,
    sim: SimState,
    j_exec: f64,
    u_hover: Vector3<f64>,
    trajectory: Vec<TrajectorySample>,
    staged: Vec<RegressorRecord>,
}

impl Executor<'_> {
    fn execute(&mut self, tube: &TubeTrajectory, kind: &'static str) -> Result<(), Error> {
        let from_t = tube.start_time();
        let n_steps = ((tube.end_time() - from_t) / self.dt).round() as usize;
        let dense = tube.dense_reference(self.model, self.dt);
        if dense.steps() != n_steps {
            return Err(Error::Config(
                "committed trajectory does not align with the execution grid".into(),
            ));
        }
        let goal = self.spec.goal.center();
        for j in 0..n_steps {
            let t = from_t + j as f64 * self.dt;
            let x = if self.strict {
                dense.states[j]
            } else {
                self.sim.state
            };
            if !self.spec.safe.contains(&x.pos, SAFETY_TOL) {
                return Err(Error::SafetyViolation {
                    time: t,
                    what: format!(
                        "position ({:.3}, {:.3}, {:.3}) leaves free space",
                        x.pos[0], x.pos[1], x.pos[2]
                    ),
                });
            }
            let u = if self.strict {
                dense.inputs[j]
            } else {
                ancillary_control(self.gains, &x, &dense.states[j], &dense.inputs[j], &self.spec.input)
            };
            self.trajectory.push(TrajectorySample {
                t,
                pos: x.pos.into(),
                vel: x.vel.into(),
                input: u.into(),
                kind,
            });
            let next = if self.strict {
                let planned = dense.states[j + 1];
                self.sim.state = planned;
                self.sim.time = t + self.dt;
                planned
            } else {
                step(self.model, &mut self.sim, &u, self.dt)?;
                self.sim.state
            };
            self.j_exec += step_cost(
                &self.spec.weights,
                &goal,
                &self.u_hover,
                &x.pos,
                &next.pos,
                &u,
                self.dt,
            );
            if self.collect && (j + 1) % self.sample_every == 0 {
                let noise = self.sim.sample_meas_noise(self.model.meas_bound);
                let meas_state = if self.strict { dense.states[j + 1] } else { next };
                let params = self.sim.true_params.clone();
                self.staged
                    .push(measure_from_state(self.model, &meas_state, &u, &params, &noise));
            }
        }
        Ok(())
    }

    /// Free-space check on the state reached after the last executed step.
    fn check_final_state(&self, t: f64) -> Result<(), Error> {
        let p = self.sim.state.pos;
        if !self.spec.safe.contains(&p, SAFETY_TOL) {
            return Err(Error::SafetyViolation {
                time: t,
                what: format!(
                    "position ({:.3}, {:.3}, {:.3}) leaves free space",
                    p[0], p[1], p[2]
                ),
            });
        }
        Ok(())
    }
}

fn widths_of(theta: &ParameterBox) -> Vec<f64> {
    (0..theta.dim()).map(|i| theta.axis_width(i)).collect()
}

fn bounds_record(t_k: f64, theta: &ParameterBox) -> BoundsRecord {
    BoundsRecord {
        t_k,
        lower: theta.lower.iter().cloned().collect(),
        upper: theta.upper.iter().cloned().collect(),
    }
}

fn make_gatekeeper(cfg: &RunConfig, spec: MissionSpec) -> Gatekeeper {
    let mut keeper = Gatekeeper::new(
        cfg.system_model(),
        spec,
        cfg.gains,
        cfg.planner.clone(),
        cfg.candidate.clone(),
    );
    keeper.lambda_score = cfg.lambda_score;
    keeper.dt_sample = cfg.dt_sample;
    keeper
}

fn make_executor<'a>(
    cfg: &'a RunConfig,
    seed: u64,
    model: &'a SystemModel,
    spec: &'a MissionSpec,
    strict: bool,
    collect: bool,
) -> Executor<'a> {
    Executor {
        model,
        spec,
        gains: &cfg.gains,
        dt: cfg.dt,
        sample_every: (cfg.dt_sample / cfg.dt).round() as usize,
        strict,
        collect,
        sim: SimState::new(seed, cfg.start_state(), cfg.true_params_vector()),
        j_exec: 0.0,
        u_hover: hover_input(model),
        trajectory: Vec::new(),
        staged: Vec::new(),
    }
}

/// Fly the initial backup plan to the end of the mission with no exploration
/// and no re-identification.  Its realized cost defines the 100 % reference
/// that budgets are expressed against.
pub fn run_baseline(cfg: &RunConfig, seed: u64, strict: bool) -> Result<RunReport, Error> {
    let started = Instant::now();
    cfg.validate()?;
    let model = cfg.system_model();
    let spec = cfg.mission()?;
    let theta0 = cfg.theta_box()?;
    let keeper = make_gatekeeper(cfg, spec.clone());
    let (backup, _) = keeper.refresh_backup(&theta0, cfg.start_state(), 0.0, None)?;

    let mut exec = make_executor(cfg, seed, &model, &spec, strict, false);
    exec.execute(&backup, "baseline")?;
    exec.check_final_state(cfg.t_final)?;
    let last = exec.sim.state;
    exec.trajectory.push(TrajectorySample {
        t: cfg.t_final,
        pos: last.pos.into(),
        vel: last.vel.into(),
        input: (*exec.trajectory.last().map(|s| &s.input).unwrap_or(&[0.0; 3])).into(),
        kind: "baseline",
    });

    let total = exec.j_exec;
    let widths = widths_of(&theta0);
    Ok(RunReport {
        mode: "baseline".into(),
        seed,
        strict_prop1: strict,
        total_cost: total,
        baseline_cost: total,
        cost_percent: 100.0,
        budget: cfg.budget_fraction * total,
        budget_fraction: cfg.budget_fraction,
        initial_widths: widths.clone(),
        final_widths: widths.clone(),
        width_reduction_percent: vec![0.0; widths.len()],
        safety_violations: 0,
        commits: Vec::new(),
        prop1_min_slack: None,
        prop1_segments: 0,
        width_checks: Vec::new(),
        wall_time_s: started.elapsed().as_secs_f64(),
        trajectory: exec.trajectory,
        bounds: vec![bounds_record(0.0, &theta0)],
    })
}

/// Full dual-control mission: run the same-seed baseline to fix the budget,
/// then loop decision cycles until the deadline, identifying the drag
/// parameters from the measurements gathered along the way.
pub fn run_dual(cfg: &RunConfig, seed: u64, strict: bool) -> Result<RunReport, Error> {
    let started = Instant::now();
    cfg.validate()?;
    let baseline = run_baseline(cfg, seed, strict)?;
    let budget = cfg.budget_fraction * baseline.total_cost;

    let model = cfg.system_model();
    let mut spec = cfg.mission()?;
    spec.budget = budget;
    let keeper = make_gatekeeper(cfg, spec.clone());
    let directions = axis_directions(model.param_dim());

    let mut polytope = FeasiblePolytope::new(cfg.theta_box()?, cfg.smid_window);
    let mut theta = polytope.hull().clone();
    let initial_widths = widths_of(&theta);
    let mut ledger = BudgetLedger::new(budget);
    let mut exec = make_executor(cfg, seed, &model, &spec, strict, true);
    let mut commits: Vec<CommitRecord> = Vec::new();
    let mut width_checks: Vec<WidthCheck> = Vec::new();
    let mut bounds = vec![bounds_record(0.0, &theta)];

    let mut backup: Option<TubeTrajectory> = None;
    let mut anchor = cfg.start_state();
    let mut t_k = 0.0;
    while cfg.t_final - t_k > 1e-9 {
        ledger.j_exec = exec.j_exec;
        let outcome = keeper.cycle(&theta, anchor, t_k, backup.as_ref(), &mut ledger)?;
        let c = outcome.commitment;
        let kind = c.kind.label();
        commits.push(CommitRecord {
            t_k,
            kind: kind.into(),
            i_star: match c.kind {
                CommitKind::Informative { index } => index,
                _ => 0,
            },
            horizon: c.horizon,
            score: c.score,
            delta_w: c.delta_w,
            delta_j: c.delta_j,
            j_exec: ledger.j_exec,
            j_back: ledger.j_back,
            budget,
        });

        // Width prediction for the committed segment, to be compared with
        // the box the identifier actually reaches.
        let stack = keeper.planned_stack(&c.tube.nominal)?;
        let predicted: Vec<f64> = directions
            .iter()
            .map(|d| Ok(predicted_width(&theta, &stack, d)?.predicted_width))
            .collect::<Result<_, Error>>()?;

        exec.execute(&c.tube, kind)?;
        let staged: Vec<RegressorRecord> = exec.staged.drain(..).collect();
        polytope.update(&staged)?;
        theta = polytope.hull().clone();

        let t_next = c.tube.end_time();
        bounds.push(bounds_record(t_next, &theta));
        for (axis, pred) in predicted.into_iter().enumerate() {
            let actual = theta.axis_width(axis);
            width_checks.push(WidthCheck {
                t_k,
                horizon: c.horizon,
                axis,
                predicted: pred,
                actual,
                slack: pred - actual,
            });
        }

        anchor = c.tube.nominal.end_state();
        backup = Some(outcome.backup);
        t_k = t_next;
    }
    exec.check_final_state(cfg.t_final)?;
    let last = exec.sim.state;
    let last_input = *exec.trajectory.last().map(|s| &s.input).unwrap_or(&[0.0; 3]);
    let last_kind = exec.trajectory.last().map(|s| s.kind).unwrap_or("terminal");
    exec.trajectory.push(TrajectorySample {
        t: cfg.t_final,
        pos: last.pos.into(),
        vel: last.vel.into(),
        input: last_input.into(),
        kind: last_kind,
    });

    let final_widths = widths_of(&theta);
    let prop1_min_slack = width_checks
        .iter()
        .map(|w| w.slack)
        .min_by(|a, b| a.partial_cmp(b).expect("finite slack"));
    let total = exec.j_exec;
    Ok(RunReport {
        mode: "dual".into(),
        seed,
        strict_prop1: strict,
        total_cost: total,
        baseline_cost: baseline.total_cost,
        cost_percent: 100.0 * total / baseline.total_cost,
        budget,
        budget_fraction: cfg.budget_fraction,
        width_reduction_percent: RunReport::reduction_percent(&initial_widths, &final_widths),
        initial_widths,
        final_widths,
        safety_violations: 0,
        prop1_segments: commits.len(),
        commits,
        prop1_min_slack,
        width_checks,
        wall_time_s: started.elapsed().as_secs_f64(),
        trajectory: exec.trajectory,
        bounds,
    })
}
