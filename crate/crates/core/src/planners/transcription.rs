//! Single-shooting transcription: decision variables are per-segment
//! acceleration commands squashed into the (margin-eroded) input box through
//! `u = c + h ∘ tanh(ξ)`, the rollout is the same RK4 chain used for nominal
//! trajectories, and gradients come from a reverse-mode adjoint sweep rather
//! than finite differences.

use crate::dynamics::{rk4_step, State, SystemModel};
use crate::error::Error;
use crate::planners::gramian::{lambda_min_sym, phi_outer, phi_outer_vjp};
use crate::trajectory::{substeps, NominalTrajectory};
use crate::tubes::Box3;
use nalgebra::{DMatrix, Vector3};

/// Elementwise tanh squashing of unconstrained variables into a box.
#[derive(Debug, Clone)]
pub struct InputSquash {
    pub center: Vector3<f64>,
    pub half: Vector3<f64>,
}

impl InputSquash {
    pub fn new(input_box: &Box3, margin: f64) -> Result<Self, Error> {
        let eroded = input_box.erode(margin, "input box planning margin")?;
        Ok(InputSquash {
            center: eroded.center(),
            half: eroded.half_widths(),
        })
    }

    pub fn squash(&self, xi: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.center[i] + self.half[i] * xi[i].tanh())
    }

    /// `d u_i / d ξ_i` (the squashing map is diagonal).
    pub fn squash_jac(&self, xi: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| {
            let t = xi[i].tanh();
            self.half[i] * (1.0 - t * t)
        })
    }

    /// Inverse map for warm starts; saturating inputs are clamped slightly
    /// inside the box so the atanh stays finite.
    pub fn unsquash(&self, u: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| {
            if self.half[i] < 1e-12 {
                0.0
            } else {
                let r = ((u[i] - self.center[i]) / self.half[i]).clamp(-0.999_999, 0.999_999);
                r.atanh()
            }
        })
    }
}

/// Augmented-Lagrangian data for pinning the trajectory end state to a
/// rejoin target on the backup plan.
#[derive(Debug, Clone)]
pub struct RejoinTerm {
    pub target: State,
    pub nu_pos: Vector3<f64>,
    pub nu_vel: Vector3<f64>,
    pub mu: f64,
}

impl RejoinTerm {
    pub fn new(target: State, mu: f64) -> Self {
        RejoinTerm {
            target,
            nu_pos: Vector3::zeros(),
            nu_vel: Vector3::zeros(),
            mu,
        }
    }
}

/// Excitation reward shaping: log-det reward on the regularized Gramian plus
/// a quadratic hinge pushing its smallest eigenvalue above `alpha`.
#[derive(Debug, Clone)]
pub struct ExcitationTerm {
    pub gamma: f64,
    pub alpha: f64,
    pub mu_exc: f64,
    pub eta: f64,
}

/// Weighted objective pieces; a zero weight (or `None`) disables a piece.
#[derive(Debug, Clone)]
pub struct ObjectiveTerms {
    pub w_effort: f64,
    pub u_hover: Vector3<f64>,
    pub w_state: f64,
    pub goal_center: Vector3<f64>,
    /// Free-space corridor already eroded by the tube radius + plan margin.
    pub corridor: Option<Box3>,
    pub w_corridor: f64,
    /// Obstacles already inflated by the tube radius + plan margin.
    pub obstacles: Vec<Box3>,
    pub w_obstacle: f64,
    /// Soft speed ceiling (certifiable limit minus a margin).
    pub speed_soft: f64,
    pub w_speed: f64,
    /// Terminal goal box already eroded by the tube radius + plan margin.
    pub goal_box: Option<Box3>,
    pub w_goal: f64,
    pub w_term_vel: f64,
    pub rejoin: Option<RejoinTerm>,
    pub excitation: Option<ExcitationTerm>,
}

impl ObjectiveTerms {
    /// Everything off; callers enable the pieces they need.
    pub fn empty(u_hover: Vector3<f64>) -> Self {
        ObjectiveTerms {
            w_effort: 0.0,
            u_hover,
            w_state: 0.0,
            goal_center: Vector3::zeros(),
            corridor: None,
            w_corridor: 0.0,
            obstacles: Vec::new(),
            w_obstacle: 0.0,
            speed_soft: f64::INFINITY,
            w_speed: 0.0,
            goal_box: None,
            w_goal: 0.0,
            w_term_vel: 0.0,
            rejoin: None,
            excitation: None,
        }
    }
}

/// Individual objective values at the evaluated point, for diagnostics and
/// outer-loop feasibility decisions.
#[derive(Debug, Clone, Copy, Default)]
pub struct TermValues {
    pub effort: f64,
    pub state: f64,
    pub corridor: f64,
    pub obstacle: f64,
    pub speed: f64,
    pub terminal: f64,
    pub rejoin: f64,
    pub excitation: f64,
    /// Smallest Gramian eigenvalue (0 when excitation is disabled).
    pub lambda_min: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub terms: TermValues,
}

/// A fixed-grid shooting problem: initial state, segment grid, squashed
/// inputs, and the objective configuration.
#[derive(Debug, Clone)]
pub struct ShootingProblem<'a> {
    pub model: &'a SystemModel,
    pub theta: Vec<f64>,
    pub x0: State,
    pub t0: f64,
    pub seg: f64,
    pub n_seg: usize,
    pub sub_dt: f64,
    pub squash: InputSquash,
    pub terms: ObjectiveTerms,
}

impl<'a> ShootingProblem<'a> {
    pub fn dim(&self) -> usize {
        3 * self.n_seg
    }

    fn n_sub(&self) -> usize {
        substeps(self.seg, self.sub_dt)
    }

    fn step_h(&self) -> f64 {
        self.seg / self.n_sub() as f64
    }

    pub fn inputs_from(&self, xi: &[f64]) -> Vec<Vector3<f64>> {
        (0..self.n_seg)
            .map(|i| self.squash.squash(&Vector3::new(xi[3 * i], xi[3 * i + 1], xi[3 * i + 2])))
            .collect()
    }

    pub fn xi_from_inputs(&self, inputs: &[Vector3<f64>]) -> Vec<f64> {
        let mut xi = Vec::with_capacity(3 * inputs.len());
        for u in inputs {
            let v = self.squash.unsquash(u);
            xi.extend_from_slice(&[v[0], v[1], v[2]]);
        }
        xi
    }

    /// Nominal trajectory for the current variables; identical floating-point
    /// chain to the internal rollout, so knots agree bitwise.
    pub fn nominal(&self, xi: &[f64]) -> NominalTrajectory {
        let inputs = self.inputs_from(xi);
        NominalTrajectory::rollout(
            self.model,
            &nalgebra::DVector::from_vec(self.theta.clone()),
            self.x0,
            self.t0,
            self.seg,
            &inputs,
            self.sub_dt,
        )
    }

    /// All substep boundary states (length `n_seg * n_sub + 1`).
    fn rollout_states(&self, inputs: &[Vector3<f64>]) -> Vec<State> {
        let n_sub = self.n_sub();
        let h = self.step_h();
        let zero = Vector3::zeros();
        let mut states = Vec::with_capacity(self.n_seg * n_sub + 1);
        states.push(self.x0);
        let mut x = self.x0;
        for u in inputs {
            for _ in 0..n_sub {
                x = rk4_step(self.model, &x, u, &self.theta, &zero, h);
                states.push(x);
            }
        }
        states
    }

    /// Objective value, gradient with respect to the unconstrained variables,
    /// and the per-term breakdown.
    pub fn evaluate(&self, xi: &[f64]) -> Evaluation {
        assert_eq!(xi.len(), self.dim(), "variable dimension");
        let n_sub = self.n_sub();
        let h = self.step_h();
        let n_total = self.n_seg * n_sub;
        let inputs = self.inputs_from(xi);
        let states = self.rollout_states(&inputs);
        let t = &self.terms;

        let mut terms = TermValues::default();
        let mut value = 0.0;
        // Direct cotangents on each stored state from the penalty terms.
        let mut xbar = vec![Adj::zero(); n_total + 1];
        let mut ubar = vec![Vector3::zeros(); self.n_seg];

        // Effort, exact per segment.
        if t.w_effort > 0.0 {
            for (i, u) in inputs.iter().enumerate() {
                let d = u - t.u_hover;
                terms.effort += t.w_effort * self.seg * d.norm_squared();
                ubar[i] += d * (2.0 * t.w_effort * self.seg);
            }
            value += terms.effort;
        }

        // Running costs: trapezoid over the substep grid.
        for (j, s) in states.iter().enumerate() {
            let tw = if j == 0 || j == n_total { 0.5 } else { 1.0 } * h;
            if t.w_state > 0.0 {
                let d = s.pos - t.goal_center;
                terms.state += t.w_state * tw * d.norm_squared();
                xbar[j].p += d * (2.0 * t.w_state * tw);
            }
            if let (Some(c), true) = (&t.corridor, t.w_corridor > 0.0) {
                let (v2, g) = outside_sq_grad(c, &s.pos);
                if v2 > 0.0 {
                    terms.corridor += t.w_corridor * tw * v2;
                    xbar[j].p += g * (t.w_corridor * tw);
                }
            }
            if t.w_obstacle > 0.0 {
                for ob in &t.obstacles {
                    let (depth, g) = penetration_grad(ob, &s.pos);
                    if depth > 0.0 {
                        terms.obstacle += t.w_obstacle * tw * depth * depth;
                        xbar[j].p += g * (t.w_obstacle * tw * 2.0 * depth);
                    }
                }
            }
            if t.w_speed > 0.0 && t.speed_soft.is_finite() {
                let sp = s.vel.norm();
                if sp > t.speed_soft {
                    let ex = sp - t.speed_soft;
                    terms.speed += t.w_speed * tw * ex * ex;
                    xbar[j].v += s.vel * (t.w_speed * tw * 2.0 * ex / sp);
                }
            }
        }
        value += terms.state + terms.corridor + terms.obstacle + terms.speed;

        // Terminal terms on the last state.
        let last = states[n_total];
        if let (Some(gb), true) = (&t.goal_box, t.w_goal > 0.0) {
            let (v2, g) = outside_sq_grad(gb, &last.pos);
            terms.terminal += t.w_goal * v2;
            xbar[n_total].p += g * t.w_goal;
        }
        if t.w_term_vel > 0.0 {
            terms.terminal += t.w_term_vel * last.vel.norm_squared();
            xbar[n_total].v += last.vel * (2.0 * t.w_term_vel);
        }
        value += terms.terminal;

        if let Some(r) = &t.rejoin {
            let rp = last.pos - r.target.pos;
            let rv = last.vel - r.target.vel;
            terms.rejoin = r.nu_pos.dot(&rp)
                + r.nu_vel.dot(&rv)
                + 0.5 * r.mu * (rp.norm_squared() + rv.norm_squared());
            xbar[n_total].p += r.nu_pos + rp * r.mu;
            xbar[n_total].v += r.nu_vel + rv * r.mu;
            value += terms.rejoin;
        }

        if let Some(e) = &t.excitation {
            let p = self.model.param_dim();
            let mut g_mat = DMatrix::zeros(p, p);
            for k in 0..=self.n_seg {
                let tw = if k == 0 || k == self.n_seg { 0.5 } else { 1.0 } * self.seg;
                g_mat += phi_outer(self.model, &states[k * n_sub].vel) * tw;
            }
            let reg = &g_mat + DMatrix::identity(p, p) * e.eta;
            let (lam, q) = lambda_min_sym(&g_mat);
            terms.lambda_min = lam;
            let shortfall = (e.alpha - lam).max(0.0);
            let mut w_mat = DMatrix::zeros(p, p);
            if e.gamma > 0.0 {
                let inv = reg
                    .clone()
                    .try_inverse()
                    .expect("regularized Gramian is positive definite");
                terms.excitation += -e.gamma * log_det_pd(&reg);
                w_mat -= inv * e.gamma;
            }
            if e.mu_exc > 0.0 && shortfall > 0.0 {
                terms.excitation += e.mu_exc * shortfall * shortfall;
                let qq = &q * q.transpose();
                w_mat -= qq * (2.0 * e.mu_exc * shortfall);
            }
            value += terms.excitation;
            if w_mat.iter().any(|x| *x != 0.0) {
                for k in 0..=self.n_seg {
                    let tw = if k == 0 || k == self.n_seg { 0.5 } else { 1.0 } * self.seg;
                    let v = states[k * n_sub].vel;
                    xbar[k * n_sub].v += phi_outer_vjp(self.model, &v, &w_mat) * tw;
                }
            }
        }

        // Reverse sweep through the RK4 chain.
        let mut lambda = xbar[n_total];
        for j in (0..n_total).rev() {
            let (back, du) = rk4_vjp(self.model, &states[j], &inputs[j / n_sub], &self.theta, h, &lambda);
            ubar[j / n_sub] += du;
            lambda = back;
            lambda.p += xbar[j].p;
            lambda.v += xbar[j].v;
        }

        // Chain through the squashing map.
        let mut grad = vec![0.0; self.dim()];
        for i in 0..self.n_seg {
            let xi_i = Vector3::new(xi[3 * i], xi[3 * i + 1], xi[3 * i + 2]);
            let jac = self.squash.squash_jac(&xi_i);
            for a in 0..3 {
                grad[3 * i + a] = ubar[i][a] * jac[a];
            }
        }

        Evaluation { value, grad, terms }
    }

    /// End state of the rollout for the current variables.
    pub fn end_state(&self, xi: &[f64]) -> State {
        let inputs = self.inputs_from(xi);
        *self.rollout_states(&inputs).last().unwrap()
    }
}

/// Squared distance outside a box (per-axis hinge) and its gradient.
fn outside_sq_grad(b: &Box3, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let mut val = 0.0;
    let mut g = Vector3::zeros();
    for i in 0..3 {
        if p[i] < b.lower[i] {
            let d = b.lower[i] - p[i];
            val += d * d;
            g[i] -= 2.0 * d;
        } else if p[i] > b.upper[i] {
            let d = p[i] - b.upper[i];
            val += d * d;
            g[i] += 2.0 * d;
        }
    }
    (val, g)
}

/// Penetration depth into a box (distance to the nearest face when strictly
/// inside, 0 otherwise) and a subgradient through the nearest face.
fn penetration_grad(b: &Box3, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let mut depth = f64::INFINITY;
    let mut axis = 0;
    let mut sign = 1.0;
    for i in 0..3 {
        let lo = p[i] - b.lower[i];
        let hi = b.upper[i] - p[i];
        if lo <= 0.0 || hi <= 0.0 {
            return (0.0, Vector3::zeros());
        }
        let (d, s) = if lo <= hi { (lo, 1.0) } else { (hi, -1.0) };
        if d < depth {
            depth = d;
            axis = i;
            sign = s;
        }
    }
    let mut g = Vector3::zeros();
    g[axis] = sign;
    (depth, g)
}

/// Adjoint (cotangent) on a state.
#[derive(Debug, Clone, Copy)]
struct Adj {
    p: Vector3<f64>,
    v: Vector3<f64>,
}

impl Adj {
    fn zero() -> Self {
        Adj {
            p: Vector3::zeros(),
            v: Vector3::zeros(),
        }
    }

    fn scaled(&self, s: f64) -> Self {
        Adj {
            p: self.p * s,
            v: self.v * s,
        }
    }

    fn add_scaled(&mut self, o: &Adj, s: f64) {
        self.p += o.p * s;
        self.v += o.v * s;
    }
}

/// Pull a cotangent `w` back through the dynamics map `f(x,u) = (v, a(v,u))`
/// evaluated at stage velocity `v`; returns the state cotangent contribution
/// and the input cotangent contribution.
fn dyn_vjp(model: &SystemModel, theta: &[f64], v: &Vector3<f64>, w: &Adj) -> (Adj, Vector3<f64>) {
    let a_t = model.accel_jacobian_v(v, theta).transpose();
    (
        Adj {
            p: Vector3::zeros(),
            v: w.p + a_t * w.v,
        },
        w.v,
    )
}

/// Reverse-mode step of the classical RK4 update: given the cotangent on the
/// step output, recompute the stages from the stored step input and return
/// the cotangent on the step input plus the input-channel gradient.
fn rk4_vjp(
    model: &SystemModel,
    x: &State,
    u: &Vector3<f64>,
    theta: &[f64],
    dt: f64,
    lambda: &Adj,
) -> (Adj, Vector3<f64>) {
    let f = |s: &State| State {
        pos: s.vel,
        vel: model.accel(&s.vel, u, theta),
    };
    let k1 = f(x);
    let x2 = State {
        pos: x.pos + k1.pos * (dt / 2.0),
        vel: x.vel + k1.vel * (dt / 2.0),
    };
    let k2 = f(&x2);
    let x3 = State {
        pos: x.pos + k2.pos * (dt / 2.0),
        vel: x.vel + k2.vel * (dt / 2.0),
    };
    let k3 = f(&x3);
    let x4 = State {
        pos: x.pos + k3.pos * dt,
        vel: x.vel + k3.vel * dt,
    };

    let mut kb1 = lambda.scaled(dt / 6.0);
    let mut kb2 = lambda.scaled(dt / 3.0);
    let mut kb3 = lambda.scaled(dt / 3.0);
    let kb4 = lambda.scaled(dt / 6.0);
    let mut xbar = *lambda;
    let mut ubar = Vector3::zeros();

    let (a4, u4) = dyn_vjp(model, theta, &x4.vel, &kb4);
    xbar.add_scaled(&a4, 1.0);
    kb3.add_scaled(&a4, dt);
    ubar += u4;

    let (a3, u3) = dyn_vjp(model, theta, &x3.vel, &kb3);
    xbar.add_scaled(&a3, 1.0);
    kb2.add_scaled(&a3, dt / 2.0);
    ubar += u3;

    let (a2, u2) = dyn_vjp(model, theta, &x2.vel, &kb2);
    xbar.add_scaled(&a2, 1.0);
    kb1.add_scaled(&a2, dt / 2.0);
    ubar += u2;

    let (a1, u1) = dyn_vjp(model, theta, &x.vel, &kb1);
    xbar.add_scaled(&a1, 1.0);
    ubar += u1;

    (xbar, ubar)
}

/// log det of a symmetric positive-definite matrix via Cholesky.
fn log_det_pd(m: &DMatrix<f64>) -> f64 {
    match m.clone().cholesky() {
        Some(c) => 2.0 * (0..m.nrows()).map(|i| c.l_dirty()[(i, i)].ln()).sum::<f64>(),
        None => m.determinant().max(f64::MIN_POSITIVE).ln(),
    }
}
