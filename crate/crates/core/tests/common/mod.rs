//! Independent oracles shared by the acceptance tests.
//!
//! Everything here recomputes results from first principles (interval
//! reasoning, exhaustive vertex enumeration, direct simulation) so the
//! library is checked against code that shares none of its internals.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::rngs::StdRng;
use rand::Rng;
use tubegate_core::dynamics::rk4_step;
use tubegate_core::tubes::ancillary_control;
use tubegate_core::{
    AncillaryGains, MissionSpec, NominalTrajectory, State, SystemModel, TubeTrajectory,
};

/// Random matrix with smallest singular value bounded away from zero, so the
/// vertex-enumeration solves stay well conditioned.
pub fn random_full_rank(rng: &mut StdRng, rows: usize, cols: usize) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0));
        let smallest = a
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(f64::INFINITY, |m, s| m.min(*s));
        if smallest > 0.3 {
            return a;
        }
    }
}

/// Width of `{ e : ||A e||_inf <= bound }` along direction `d`, computed by
/// enumerating candidate vertices: every choice of `p` rows active at a sign
/// pattern.  The set is symmetric, so the width is twice the maximum of
/// `<d, e>` over feasible vertices.
pub fn width_by_vertex_enumeration(
    a: &DMatrix<f64>,
    bound: f64,
    d: &DVector<f64>,
) -> Option<f64> {
    let (m, p) = a.shape();
    let mut best: Option<f64> = None;
    let mut subset = vec![0usize; p];
    enumerate_subsets(m, p, 0, 0, &mut subset, &mut |rows: &[usize]| {
        let sub = DMatrix::from_fn(p, p, |i, j| a[(rows[i], j)]);
        let Some(inv) = sub.try_inverse() else {
            return;
        };
        for signs in 0..1usize << p {
            let rhs = DVector::from_fn(p, |i, _| {
                if signs >> i & 1 == 1 {
                    bound
                } else {
                    -bound
                }
            });
            let vertex = &inv * &rhs;
            let feasible = (a * &vertex).amax() <= bound * (1.0 + 1e-9) + 1e-9;
            if feasible {
                let v = d.dot(&vertex);
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
    });
    best.map(|b| 2.0 * b)
}

fn enumerate_subsets(
    m: usize,
    p: usize,
    depth: usize,
    start: usize,
    subset: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == p {
        visit(subset);
        return;
    }
    for i in start..m {
        subset[depth] = i;
        enumerate_subsets(m, p, depth + 1, i + 1, subset, visit);
    }
}

/// Constant-velocity nominal trajectory: `n` knots of length `seg`, the same
/// velocity at every knot.  Positions integrate the velocity; inputs are
/// irrelevant to Gramian quadrature and set to zero.
pub fn constant_velocity_nominal(v: Vector3<f64>, seg: f64, n: usize, p: usize) -> NominalTrajectory {
    let states = (0..=n)
        .map(|k| State::new(v * (seg * k as f64), v))
        .collect();
    NominalTrajectory {
        t0: 0.0,
        seg,
        states,
        inputs: vec![Vector3::zeros(); n],
        theta_hat: DVector::zeros(p),
    }
}

/// How the worst-case disturbance is chosen during an invariance run.
#[derive(Clone, Copy)]
pub enum DisturbancePolicy {
    /// Push along the sliding surface: `n * sign(s)` per axis.
    Adversarial,
    /// Random sign per axis and step, always at the bound.
    RandomSigns,
}

/// Track a certified tube with the ancillary controller against a fixed true
/// parameter and disturbances at the bound; returns the worst deviation from
/// the reference, normalized so values <= 1 mean the state stayed inside the
/// tube cross-section.
pub fn invariance_run(
    model: &SystemModel,
    tube: &TubeTrajectory,
    spec: &MissionSpec,
    gains: &AncillaryGains,
    theta_star: &DVector<f64>,
    init_dev: (Vector3<f64>, Vector3<f64>),
    policy: DisturbancePolicy,
    rng: &mut StdRng,
) -> f64 {
    let dt = 0.01;
    let reference = tube.dense_reference(model, dt);
    let mut x = State::new(
        reference.states[0].pos + init_dev.0,
        reference.states[0].vel + init_dev.1,
    );
    let mut worst = 0.0f64;
    for j in 0..reference.steps() {
        let nominal = &reference.states[j];
        let s = (x.vel - nominal.vel) + (x.pos - nominal.pos) * gains.lambda;
        let d = match policy {
            DisturbancePolicy::Adversarial => {
                Vector3::from_fn(|i, _| model.disturbance_bound * s[i].signum())
            }
            DisturbancePolicy::RandomSigns => Vector3::from_fn(|_, _| {
                if rng.gen::<bool>() {
                    model.disturbance_bound
                } else {
                    -model.disturbance_bound
                }
            }),
        };
        let u = ancillary_control(gains, &x, nominal, &reference.inputs[j], &spec.input);
        x = rk4_step(model, &x, &u, theta_star.as_slice(), &d, dt);
        let after = &reference.states[j + 1];
        let dp = (x.pos - after.pos).amax() / tube.eps_pos;
        let dv = (x.vel - after.vel).amax() / tube.eps_vel;
        worst = worst.max(dp).max(dv);
    }
    worst
}
