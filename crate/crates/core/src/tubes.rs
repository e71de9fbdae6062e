//! Tube cross-sections around nominal trajectories, constraint tightening,
//! and the saturated sliding-mode ancillary controller that keeps the true
//! state inside the tube for every parameter in the current box.
//!
//! The cross-section radii come from a boundary-layer argument: with sliding
//! surface `s = (v - p_v) + lambda (r - p_r)` and correction
//! `-k sat(s / phi_bl)`, the set `{|s| <= phi_bl, |r - p_r| <= phi_bl/lambda}`
//! is forward-invariant per axis whenever
//! `k >= 2 lambda phi_bl + delta + n_add`, where `delta` bounds the drag
//! mismatch over the speeds the tube can reach. Planning reserves that
//! authority through `certified_speed_cap`, which is also the only channel
//! through which a smaller parameter box buys faster (cheaper) trajectories.

use crate::dynamics::{ParameterBox, State, SystemModel};
use crate::error::Error;
use crate::trajectory::{CostWeights, DenseTrajectory, NominalTrajectory, DENSE_DT};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Axis-aligned box in 3-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub lower: Vector3<f64>,
    pub upper: Vector3<f64>,
}

impl Box3 {
    pub fn new(lower: Vector3<f64>, upper: Vector3<f64>) -> Result<Self, Error> {
        if (0..3).any(|i| lower[i] > upper[i]) {
            return Err(Error::Config(format!(
                "box lower exceeds upper: {lower:?} vs {upper:?}"
            )));
        }
        Ok(Box3 { lower, upper })
    }

    pub fn from_center_half(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        Box3 {
            lower: center - half,
            upper: center + half,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.lower + self.upper) * 0.5
    }

    pub fn half_widths(&self) -> Vector3<f64> {
        (self.upper - self.lower) * 0.5
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.lower[i] - tol && p[i] <= self.upper[i] + tol)
    }

    /// Strictly inside by more than `margin` on every axis.
    pub fn interior_contains(&self, p: &Vector3<f64>, margin: f64) -> bool {
        (0..3).all(|i| p[i] > self.lower[i] + margin && p[i] < self.upper[i] - margin)
    }

    pub fn clip(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| p[i].clamp(self.lower[i], self.upper[i]))
    }

    /// Shrink by `e` on every face; error when a face pair crosses.
    pub fn erode(&self, e: f64, what: &'static str) -> Result<Box3, Error> {
        let lower = self.lower.add_scalar(e);
        let upper = self.upper.add_scalar(-e);
        if (0..3).any(|i| lower[i] > upper[i]) {
            return Err(Error::InfeasibleTightening(what));
        }
        Ok(Box3 { lower, upper })
    }

    pub fn inflate(&self, e: f64) -> Box3 {
        Box3 {
            lower: self.lower.add_scalar(-e),
            upper: self.upper.add_scalar(e),
        }
    }

    pub fn contains_box(&self, other: &Box3, tol: f64) -> bool {
        self.contains(&other.lower, tol) && self.contains(&other.upper, tol)
    }

    pub fn intersects(&self, other: &Box3) -> bool {
        (0..3).all(|i| self.lower[i] <= other.upper[i] && self.upper[i] >= other.lower[i])
    }

    /// True when `other` spans this box's full extent along axis `i`.
    fn spans_axis(&self, other: &Box3, i: usize) -> bool {
        other.lower[i] <= self.lower[i] && other.upper[i] >= self.upper[i]
    }
}

/// Free space: a corridor box minus axis-aligned rectangular obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeSet {
    pub corridor: Box3,
    pub obstacles: Vec<Box3>,
}

impl SafeSet {
    /// Membership with tolerance: inside the corridor and not inside any
    /// obstacle by more than `tol`.
    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        if !self.corridor.contains(p, tol) {
            return false;
        }
        !self
            .obstacles
            .iter()
            .any(|o| (0..3).all(|i| p[i] > o.lower[i] + tol && p[i] < o.upper[i] - tol))
    }
}

/// Mission geometry, actuation limits, cost weights, and commit cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSpec {
    pub safe: SafeSet,
    /// Commanded-acceleration box.
    pub input: Box3,
    pub goal: Box3,
    /// Total-cost budget; resolved from the baseline run before dual runs.
    pub budget: f64,
    pub t_final: f64,
    pub weights: CostWeights,
    pub t_commit: f64,
}

impl MissionSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if !self.safe.corridor.contains_box(&self.goal, 1e-12) {
            return Err(Error::Config("goal box leaves the corridor".into()));
        }
        if self.safe.obstacles.iter().any(|o| o.intersects(&self.goal)) {
            return Err(Error::Config("goal box intersects an obstacle".into()));
        }
        if !(self.budget > 0.0) {
            return Err(Error::Config("budget must be positive".into()));
        }
        if !(self.t_commit > 0.0) || !(self.t_final > 0.0) {
            return Err(Error::Config("time parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Sliding-mode tracking gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AncillaryGains {
    /// Surface slope (1/s).
    pub lambda: f64,
    /// Switching gain (m/s^2).
    pub k: f64,
    /// Boundary-layer width (m/s).
    pub phi_bl: f64,
}

impl AncillaryGains {
    pub fn validate(&self) -> Result<(), Error> {
        if self.lambda > 0.0 && self.k > 0.0 && self.phi_bl > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("ancillary gains must be positive".into()))
        }
    }

    pub fn eps_pos(&self) -> f64 {
        self.phi_bl / self.lambda
    }

    pub fn eps_vel(&self) -> f64 {
        self.phi_bl
    }
}

/// Worst drag-acceleration disagreement between any two parameter vectors in
/// the box, over all speeds up to `speed_cap`.
pub fn mismatch_bound(model: &SystemModel, theta_box: &ParameterBox, speed_cap: f64) -> f64 {
    model
        .regressor_column_bounds(speed_cap)
        .iter()
        .enumerate()
        .map(|(i, cb)| cb * theta_box.axis_width(i))
        .sum()
}

/// Cross-section half-widths for the given mismatch level. Requires the
/// switching gain to dominate mismatch plus process disturbance.
pub fn tube_radius(
    gains: &AncillaryGains,
    delta: f64,
    n_add: f64,
) -> Result<(f64, f64), Error> {
    if gains.k <= delta + n_add {
        return Err(Error::InvalidGains {
            gain: gains.k,
            required: delta + n_add,
        });
    }
    Ok((gains.eps_pos(), gains.eps_vel()))
}

/// Switching-gain authority left over once mismatch, disturbance, and the
/// boundary-layer recirculation term are paid for; the tube is certifiable
/// when this is nonnegative.
pub fn gain_slack(gains: &AncillaryGains, delta: f64, n_add: f64) -> f64 {
    gains.k - delta - n_add - 2.0 * gains.lambda * gains.phi_bl
}

/// Largest speed the tube may reach (nominal speed plus velocity radius)
/// while retaining `reserve` of switching-gain authority. Grows as the
/// parameter box shrinks — the mechanism by which identification buys
/// faster plans.
pub fn certified_speed_cap(
    model: &SystemModel,
    theta_box: &ParameterBox,
    gains: &AncillaryGains,
    n_add: f64,
    reserve: f64,
) -> Result<f64, Error> {
    let allow = gain_slack(gains, 0.0, n_add) - reserve;
    if allow <= 0.0 {
        return Err(Error::InvalidGains {
            gain: gains.k,
            required: n_add + 2.0 * gains.lambda * gains.phi_bl + reserve,
        });
    }
    // mismatch_bound is a polynomial in the cap with nonnegative
    // coefficients; invert by bisection.
    let mut lo = 0.0;
    let mut hi = 1.0;
    while mismatch_bound(model, theta_box, hi) < allow && hi < 1e6 {
        hi *= 2.0;
    }
    if hi >= 1e6 {
        return Ok(hi); // effectively unconstrained (e.g. point box)
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mismatch_bound(model, theta_box, mid) <= allow {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Constraint sets after tube tightening.
#[derive(Debug, Clone, PartialEq)]
pub struct TightenedSets {
    pub safe: SafeSet,
    pub input: Box3,
    pub goal: Box3,
}

/// Erode the corridor and goal by the position radius, inflate obstacles by
/// it, and reserve `input_margin` of actuation per axis for the ancillary
/// controller.
pub fn tighten(
    spec: &MissionSpec,
    eps_pos: f64,
    _eps_vel: f64,
    input_margin: f64,
) -> Result<TightenedSets, Error> {
    let corridor = spec.safe.corridor.erode(eps_pos, "corridor")?;
    let obstacles: Vec<Box3> = spec
        .safe
        .obstacles
        .iter()
        .map(|o| o.inflate(eps_pos))
        .collect();
    // An inflated obstacle that spans the corridor's cross-section on two
    // axes severs every passage along the third.
    for o in &obstacles {
        if !o.intersects(&corridor) {
            continue;
        }
        for axis in 0..3 {
            let others = [(axis + 1) % 3, (axis + 2) % 3];
            let spans_cross = others.iter().all(|&b| corridor.spans_axis(o, b));
            let severs = o.lower[axis] > corridor.lower[axis] && o.upper[axis] < corridor.upper[axis];
            if spans_cross && severs {
                return Err(Error::InfeasibleTightening(
                    "inflated obstacle severs the corridor",
                ));
            }
        }
    }
    let goal = spec.goal.erode(eps_pos, "goal")?;
    let input = spec.input.erode(input_margin, "input set")?;
    Ok(TightenedSets {
        safe: SafeSet { corridor, obstacles },
        input,
        goal,
    })
}

/// Raw sliding-mode correction `-k sat(s/phi_bl)` per axis.
pub fn ancillary_correction(
    gains: &AncillaryGains,
    x: &State,
    nominal: &State,
) -> Vector3<f64> {
    let s = (x.vel - nominal.vel) + (x.pos - nominal.pos) * gains.lambda;
    Vector3::from_fn(|i, _| -gains.k * (s[i] / gains.phi_bl).clamp(-1.0, 1.0))
}

/// Total commanded input: nominal plus correction, clipped into the input
/// box so saturation can never produce an inadmissible command.
pub fn ancillary_control(
    gains: &AncillaryGains,
    x: &State,
    nominal: &State,
    u_nominal: &Vector3<f64>,
    input: &Box3,
) -> Vector3<f64> {
    input.clip(&(u_nominal + ancillary_correction(gains, x, nominal)))
}

/// A nominal trajectory together with the certified cross-section.
#[derive(Debug, Clone)]
pub struct TubeTrajectory {
    pub nominal: NominalTrajectory,
    pub eps_pos: f64,
    pub eps_vel: f64,
    /// Speed bound used for the mismatch certificate.
    pub speed_cap: f64,
    /// Certified drag-mismatch bound at that cap.
    pub delta: f64,
}

impl TubeTrajectory {
    pub fn start_time(&self) -> f64 {
        self.nominal.t0
    }

    pub fn end_time(&self) -> f64 {
        self.nominal.end_time()
    }

    /// Knot-aligned slice; the certificate carries over because the slice
    /// can only reach a subset of the speeds.
    pub fn restrict(&self, a: f64, b: f64) -> Result<TubeTrajectory, Error> {
        Ok(TubeTrajectory {
            nominal: self.nominal.restrict(a, b)?,
            ..self.clone()
        })
    }

    /// Per-axis containment of an actual state in the cross-section around
    /// a reference sample.
    pub fn contains_deviation(&self, nominal: &State, actual: &State, slack: f64) -> bool {
        let dp = (actual.pos - nominal.pos).amax();
        let dv = (actual.vel - nominal.vel).amax();
        dp <= self.eps_pos * (1.0 + slack) && dv <= self.eps_vel * (1.0 + slack)
    }

    pub fn dense_reference(&self, model: &SystemModel, dt: f64) -> DenseTrajectory {
        self.nominal.dense(model, dt)
    }
}

/// First constraint failure found while certifying a tube.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeViolation {
    pub time: f64,
    pub what: String,
}

#[derive(Debug, Clone)]
pub enum TubeOutcome {
    Valid(TubeTrajectory),
    Violation(TubeViolation),
}

impl TubeOutcome {
    pub fn valid(self) -> Option<TubeTrajectory> {
        match self {
            TubeOutcome::Valid(t) => Some(t),
            TubeOutcome::Violation(_) => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, TubeOutcome::Valid(_))
    }
}

/// Certify a tube around a nominal trajectory: fix the speed cap
/// (nominal max speed plus velocity radius, iterated to a fixed point),
/// check gain authority at that cap, then walk the dense grid checking that
/// the tube stays in free space and nominal inputs leave the ancillary
/// reserve intact. A trajectory whose tube touches a constraint is reported
/// as a violation value, not an error.
pub fn validate_tube(
    nominal: &NominalTrajectory,
    model: &SystemModel,
    theta_box: &ParameterBox,
    spec: &MissionSpec,
    gains: &AncillaryGains,
    n_add: f64,
    terminal_goal: bool,
) -> TubeOutcome {
    let dense = nominal.dense(model, DENSE_DT.min(nominal.seg));
    let max_speed = dense.max_speed();
    let mut cap = max_speed + gains.eps_vel();
    let mut delta = mismatch_bound(model, theta_box, cap);
    for _ in 0..5 {
        let next_cap = max_speed + gains.eps_vel();
        let next_delta = mismatch_bound(model, theta_box, next_cap);
        if (next_cap - cap).abs() <= 1e-12 && (next_delta - delta).abs() <= 1e-12 {
            cap = next_cap;
            delta = next_delta;
            break;
        }
        cap = next_cap;
        delta = next_delta;
    }
    let (eps_pos, eps_vel) = match tube_radius(gains, delta, n_add) {
        Ok(r) => r,
        Err(_) => {
            return TubeOutcome::Violation(TubeViolation {
                time: nominal.t0,
                what: format!(
                    "switching gain {} cannot dominate mismatch {delta:.4} + disturbance {n_add}",
                    gains.k
                ),
            })
        }
    };
    if gain_slack(gains, delta, n_add) < 0.0 {
        return TubeOutcome::Violation(TubeViolation {
            time: nominal.t0,
            what: format!(
                "speed cap {cap:.3} exceeds certified authority (mismatch {delta:.4})"
            ),
        });
    }
    let tight = match tighten(spec, eps_pos, eps_vel, gains.k) {
        Ok(t) => t,
        Err(e) => {
            return TubeOutcome::Violation(TubeViolation {
                time: nominal.t0,
                what: format!("tightening failed: {e}"),
            })
        }
    };
    for j in 0..=dense.steps() {
        let t = dense.time(j);
        let p = &dense.states[j].pos;
        if !tight.safe.contains(p, 1e-9) {
            return TubeOutcome::Violation(TubeViolation {
                time: t,
                what: format!("tube leaves free space at {p:?}"),
            });
        }
        if j < dense.steps() && !tight.input.contains(&dense.inputs[j], 1e-9) {
            return TubeOutcome::Violation(TubeViolation {
                time: t,
                what: format!("nominal input {:?} eats into the ancillary reserve", dense.inputs[j]),
            });
        }
    }
    if terminal_goal {
        let p = nominal.end_state().pos;
        if !tight.goal.contains(&p, 1e-9) {
            return TubeOutcome::Violation(TubeViolation {
                time: nominal.end_time(),
                what: format!("terminal position {p:?} misses the tightened goal"),
            });
        }
    }
    TubeOutcome::Valid(TubeTrajectory {
        nominal: nominal.clone(),
        eps_pos,
        eps_vel,
        speed_cap: cap,
        delta,
    })
}
