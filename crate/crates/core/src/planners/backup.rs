//! Backup planner: from a start state and time, produce a certified tube
//! trajectory that stays inside the tightened free space, respects the
//! certified speed limit for the current parameter set, and ends inside the
//! tightened goal box at the mission end time.

use crate::dynamics::{ParameterBox, State, SystemModel};
use crate::error::Error;
use crate::planners::lbfgs::minimize;
use crate::planners::transcription::{InputSquash, ObjectiveTerms, ShootingProblem};
use crate::planners::{hover_input, PlannerConfig};
use crate::trajectory::{NominalTrajectory, DENSE_DT};
use crate::tubes::{
    certified_speed_cap, tighten, validate_tube, AncillaryGains, MissionSpec, TubeOutcome,
    TubeTrajectory,
};
use nalgebra::Vector3;

/// Plan a backup trajectory covering `[t0, spec.t_final]`. `warm` supplies a
/// previous backup whose inputs seed the solve. Fails with a planner error
/// (carrying the blocking tube violation) when no certifiable trajectory is
/// found within the solver budget, and with a tightening error when the
/// geometry itself leaves no free space.
pub fn plan_backup(
    model: &SystemModel,
    spec: &MissionSpec,
    gains: &AncillaryGains,
    theta_box: &ParameterBox,
    cfg: &PlannerConfig,
    x0: State,
    t0: f64,
    warm: Option<&NominalTrajectory>,
) -> Result<TubeTrajectory, Error> {
    let horizon = spec.t_final - t0;
    if horizon < cfg.backup_seg - 1e-9 {
        return Err(Error::Config(format!(
            "backup horizon {horizon:.3} shorter than one segment"
        )));
    }
    let n_seg = (horizon / cfg.backup_seg).round() as usize;
    if (n_seg as f64 * cfg.backup_seg - horizon).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "backup horizon {horizon:.3} is not a multiple of the segment length"
        )));
    }

    let eps_pos = gains.eps_pos();
    let eps_vel = gains.eps_vel();
    let tight = tighten(spec, eps_pos, eps_vel, gains.k)?;
    let n_add = model.disturbance_bound;
    let cap = certified_speed_cap(model, theta_box, gains, n_add, cfg.speed_reserve)?;
    let v_limit = cap - eps_vel;
    if v_limit <= cfg.speed_margin {
        return Err(Error::PlannerFailure(format!(
            "certified speed cap {cap:.3} leaves no nominal speed"
        )));
    }

    let u_hover = hover_input(model);
    let theta: Vec<f64> = theta_box.center().iter().cloned().collect();
    let squash = InputSquash::new(&tight.input, cfg.plan_input_margin)?;

    // Planning margins beyond the certified tightening; fall back to the
    // certified sets when a box is too thin for the extra margin.
    let plan_corridor = tight
        .safe
        .corridor
        .erode(cfg.plan_pos_margin, "corridor planning margin")
        .unwrap_or_else(|_| tight.safe.corridor.clone());
    let plan_goal = tight
        .goal
        .erode(cfg.plan_pos_margin, "goal planning margin")
        .unwrap_or_else(|_| tight.goal.clone());
    let plan_obstacles: Vec<_> = tight
        .safe
        .obstacles
        .iter()
        .map(|o| o.inflate(cfg.plan_pos_margin))
        .collect();

    let mut terms = ObjectiveTerms::empty(u_hover);
    terms.w_effort = spec.weights.effort;
    terms.w_state = spec.weights.state;
    terms.goal_center = spec.goal.center();
    terms.corridor = Some(plan_corridor);
    terms.w_corridor = cfg.w_corridor;
    terms.obstacles = plan_obstacles;
    terms.w_obstacle = cfg.w_obstacle;
    terms.speed_soft = (v_limit - cfg.speed_margin).max(0.0);
    terms.w_speed = cfg.w_speed;
    terms.goal_box = Some(plan_goal);
    terms.w_goal = cfg.w_goal;
    terms.w_term_vel = cfg.w_term_vel;

    let mut prob = ShootingProblem {
        model,
        theta,
        x0,
        t0,
        seg: cfg.backup_seg,
        n_seg,
        sub_dt: cfg.sub_dt,
        squash,
        terms,
    };

    // Warm start: previous backup inputs resampled at the new segment
    // midpoints, otherwise hover.
    let init_inputs: Vec<Vector3<f64>> = match warm {
        Some(prev) => (0..n_seg)
            .map(|i| prev.input_at(t0 + (i as f64 + 0.5) * cfg.backup_seg))
            .collect(),
        None => vec![u_hover; n_seg],
    };
    let mut xi = prob.xi_from_inputs(&init_inputs);

    let mut last_violation = String::from("solver budget exhausted");
    for _outer in 0..cfg.al_outer {
        let result = minimize(|v| {
            let e = prob.evaluate(v);
            (e.value, e.grad)
        }, &xi, cfg.max_iter, cfg.tol_grad);
        xi = result.x;
        if !result.f.is_finite() {
            return Err(Error::PlannerFailure(
                "backup objective diverged to a non-finite value".into(),
            ));
        }
        let nominal = prob.nominal(&xi);
        if std::env::var_os("PLANNER_TRACE").is_some() {
            let max_speed = nominal.dense(model, DENSE_DT).max_speed();
            eprintln!(
                "backup outer {_outer}: iters {} conv {} f {:.4e} speed {:.3}/{:.3} end ({:.2}, {:.2}, {:.2})",
                result.iterations,
                result.converged,
                result.f,
                max_speed,
                v_limit,
                nominal.end_state().pos[0],
                nominal.end_state().pos[1],
                nominal.end_state().pos[2],
            );
        }
        match validate_tube(&nominal, model, theta_box, spec, gains, n_add, true) {
            TubeOutcome::Valid(tube) => return Ok(tube),
            TubeOutcome::Violation(v) => {
                last_violation = format!("{} at t = {:.2}", v.what, v.time);
                if std::env::var_os("PLANNER_TRACE").is_some() {
                    eprintln!("backup outer {_outer}: rejected, {last_violation}");
                }
            }
        }
        prob.terms.w_corridor *= cfg.al_growth;
        prob.terms.w_obstacle *= cfg.al_growth;
        prob.terms.w_speed *= cfg.al_growth;
        prob.terms.w_goal *= cfg.al_growth;
        // De-saturate the squashed inputs before the next round; deep in the
        // tanh tails the gradient of the stiffened hinges cannot act.
        for v in xi.iter_mut() {
            *v = v.clamp(-3.5, 3.5);
        }
    }
    Err(Error::PlannerFailure(format!(
        "backup planning failed: {last_violation}"
    )))
}
