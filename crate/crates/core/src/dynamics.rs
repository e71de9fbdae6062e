//! Uncertain control-affine quadrotor models with drag, their
//! linear-in-parameter regressor form, and a fixed-step simulator with
//! bounded process disturbance and bounded measurement noise.

use crate::error::Error;
use crate::estimation::RegressorRecord;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const STATE_DIM: usize = 6;
pub const INPUT_DIM: usize = 3;
/// Measured channels per sample (acceleration components).
pub const MEAS_DIM: usize = 3;

/// Which drag structure multiplies the unknown coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DragModel {
    /// Acceleration `-C_d ||v|| v`; one unknown coefficient.
    #[serde(rename = "scalar_drag")]
    Scalar,
    /// Acceleration `-C_d1 v - C_d2 ||v|| v`; two unknown coefficients.
    #[serde(rename = "vector_drag")]
    Vector,
}

/// Position/velocity pair; the full simulation state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
}

impl State {
    pub fn new(pos: Vector3<f64>, vel: Vector3<f64>) -> Self {
        State { pos, vel }
    }

    pub fn at_rest(pos: Vector3<f64>) -> Self {
        State {
            pos,
            vel: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(self.vel.iter()).all(|v| v.is_finite())
    }

    /// Componentwise infinity-norm distance to another state.
    pub fn inf_distance(&self, other: &State) -> f64 {
        let dp = (self.pos - other.pos).amax();
        let dv = (self.vel - other.vel).amax();
        dp.max(dv)
    }
}

/// Control-affine dynamics with gravity, commanded acceleration, and an
/// unknown drag term that is linear in the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemModel {
    pub drag: DragModel,
    pub gravity: Vector3<f64>,
    /// Aggregate bound on the measurement residual `z - Phi theta*`.
    pub meas_bound: f64,
    /// Per-axis bound on the additive process disturbance.
    pub disturbance_bound: f64,
    /// Position measurement noise bound; reserved, the pipeline consumes
    /// acceleration measurements directly.
    pub pos_meas_bound: f64,
}

impl SystemModel {
    pub fn new(drag: DragModel, meas_bound: f64, disturbance_bound: f64) -> Self {
        SystemModel {
            drag,
            gravity: Vector3::new(0.0, 0.0, -9.81),
            meas_bound,
            disturbance_bound,
            pos_meas_bound: 0.0,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self.drag {
            DragModel::Scalar => 1,
            DragModel::Vector => 2,
        }
    }

    /// Drag acceleration for given coefficients.
    fn drag_accel(&self, v: &Vector3<f64>, theta: &[f64]) -> Vector3<f64> {
        let speed = v.norm();
        match self.drag {
            DragModel::Scalar => v * (theta[0] * speed),
            DragModel::Vector => v * (theta[0] + theta[1] * speed),
        }
    }

    /// Acceleration `g + u - drag(v)`.
    pub fn accel(&self, v: &Vector3<f64>, u: &Vector3<f64>, theta: &[f64]) -> Vector3<f64> {
        self.gravity + u - self.drag_accel(v, theta)
    }

    /// Jacobian of the acceleration with respect to velocity.
    pub fn accel_jacobian_v(&self, v: &Vector3<f64>, theta: &[f64]) -> Matrix3<f64> {
        let speed = v.norm();
        // d/dv (||v|| v) = ||v|| I + v v^T / ||v||, taken as 0 at v = 0.
        let quad = if speed > 1e-12 {
            Matrix3::identity() * speed + v * v.transpose() / speed
        } else {
            Matrix3::zeros()
        };
        match self.drag {
            DragModel::Scalar => -quad * theta[0],
            DragModel::Vector => -Matrix3::identity() * theta[0] - quad * theta[1],
        }
    }

    /// Time derivative of the state under given parameters (no disturbance).
    pub fn eval_dynamics(
        &self,
        x: &State,
        u: &Vector3<f64>,
        theta: &DVector<f64>,
    ) -> Result<State, Error> {
        if theta.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                context: "eval_dynamics parameters",
                expected: self.param_dim(),
                got: theta.len(),
            });
        }
        if !theta.iter().all(|t| t.is_finite()) {
            return Err(Error::NonFinite("eval_dynamics parameters"));
        }
        Ok(State {
            pos: x.vel,
            vel: self.accel(&x.vel, u, theta.as_slice()),
        })
    }

    /// LIP decomposition of the measured acceleration:
    /// `y'' = phi0(x,u) + Phi(x) theta`.
    pub fn regressor(&self, x: &State, u: &Vector3<f64>) -> (DMatrix<f64>, Vector3<f64>) {
        let phi0 = self.gravity + u;
        (self.regressor_matrix(&x.vel), phi0)
    }

    /// Regressor columns as a function of velocity alone.
    pub fn regressor_matrix(&self, v: &Vector3<f64>) -> DMatrix<f64> {
        let speed = v.norm();
        match self.drag {
            DragModel::Scalar => DMatrix::from_column_slice(3, 1, (-v * speed).as_slice()),
            DragModel::Vector => {
                let mut m = DMatrix::zeros(3, 2);
                m.column_mut(0).copy_from(&(-v));
                m.column_mut(1).copy_from(&(-v * speed));
                m
            }
        }
    }

    /// Supremum of each regressor column's infinity norm over speeds up to
    /// `speed_cap`; drives the model-mismatch bound of the tube construction.
    pub fn regressor_column_bounds(&self, speed_cap: f64) -> Vec<f64> {
        match self.drag {
            DragModel::Scalar => vec![speed_cap * speed_cap],
            DragModel::Vector => vec![speed_cap, speed_cap * speed_cap],
        }
    }
}

/// Axis-aligned interval set of admissible parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, Error> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::Config("parameter box has lower > upper".into()));
        }
        Ok(ParameterBox {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn axis_width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn widths(&self) -> DVector<f64> {
        &self.upper - &self.lower
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        (0..self.dim()).all(|i| theta[i] >= self.lower[i] - 1e-12 && theta[i] <= self.upper[i] + 1e-12)
    }

    /// Extent of the box along a direction:
    /// `sup d.theta - inf d.theta = sum_i |d_i| (upper_i - lower_i)`.
    pub fn directional_width(&self, d: &DVector<f64>) -> f64 {
        (0..self.dim())
            .map(|i| d[i].abs() * (self.upper[i] - self.lower[i]))
            .sum()
    }

    /// Corner selected by a sign pattern; used by worst-case sweeps.
    pub fn corner(&self, signs: usize) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            if signs >> i & 1 == 1 {
                self.upper[i]
            } else {
                self.lower[i]
            }
        })
    }
}

/// Fraction of the measurement-noise bound consumed by the per-run sensor
/// bias; the remainder is i.i.d. jitter. Together they never exceed the bound.
const MEAS_BIAS_FRACTION: f64 = 0.75;

/// Simulator state: true plant parameters plus seeded noise streams.
#[derive(Debug, Clone)]
pub struct SimState {
    pub time: f64,
    pub state: State,
    pub true_params: DVector<f64>,
    pub rng_seed: u64,
    dist_rng: ChaCha8Rng,
    meas_rng: ChaCha8Rng,
    /// Per-channel sign of the sensor bias, fixed for the life of the run.
    meas_bias_sign: Vector3<f64>,
}

impl SimState {
    pub fn new(seed: u64, start: State, true_params: DVector<f64>) -> Self {
        let mut dist_rng = ChaCha8Rng::seed_from_u64(seed);
        dist_rng.set_stream(1);
        let mut meas_rng = ChaCha8Rng::seed_from_u64(seed);
        meas_rng.set_stream(2);
        let meas_bias_sign =
            Vector3::from_fn(|_, _| if meas_rng.gen::<bool>() { 1.0 } else { -1.0 });
        SimState {
            time: 0.0,
            state: start,
            true_params,
            rng_seed: seed,
            dist_rng,
            meas_rng,
            meas_bias_sign,
        }
    }

    pub fn sample_disturbance(&mut self, bound: f64) -> Vector3<f64> {
        if bound == 0.0 {
            return Vector3::zeros();
        }
        Vector3::from_fn(|_, _| self.dist_rng.gen_range(-bound..=bound))
    }

    /// Measurement noise modelled as a persistent sensor bias plus i.i.d.
    /// jitter. The split keeps `|noise| <= bound` on every channel while the
    /// bias puts a realistic floor under what averaging can remove.
    pub fn sample_meas_noise(&mut self, bound: f64) -> Vector3<f64> {
        if bound == 0.0 {
            return Vector3::zeros();
        }
        let jitter = (1.0 - MEAS_BIAS_FRACTION) * bound;
        Vector3::from_fn(|r, _| {
            self.meas_bias_sign[r] * MEAS_BIAS_FRACTION * bound
                + self.meas_rng.gen_range(-jitter..=jitter)
        })
    }
}

/// One RK4 step of the true dynamics with a disturbance held constant.
pub fn rk4_step(
    model: &SystemModel,
    x: &State,
    u: &Vector3<f64>,
    theta: &[f64],
    disturbance: &Vector3<f64>,
    dt: f64,
) -> State {
    let f = |s: &State| State {
        pos: s.vel,
        vel: model.accel(&s.vel, u, theta) + disturbance,
    };
    let k1 = f(x);
    let k2 = f(&State {
        pos: x.pos + k1.pos * (dt / 2.0),
        vel: x.vel + k1.vel * (dt / 2.0),
    });
    let k3 = f(&State {
        pos: x.pos + k2.pos * (dt / 2.0),
        vel: x.vel + k2.vel * (dt / 2.0),
    });
    let k4 = f(&State {
        pos: x.pos + k3.pos * dt,
        vel: x.vel + k3.vel * dt,
    });
    State {
        pos: x.pos + (k1.pos + k2.pos * 2.0 + k3.pos * 2.0 + k4.pos) * (dt / 6.0),
        vel: x.vel + (k1.vel + k2.vel * 2.0 + k3.vel * 2.0 + k4.vel) * (dt / 6.0),
    }
}

/// Advance the simulator by one step under the true parameters, sampling a
/// fresh bounded disturbance for the step.
pub fn step(model: &SystemModel, sim: &mut SimState, u: &Vector3<f64>, dt: f64) -> Result<(), Error> {
    let d = sim.sample_disturbance(model.disturbance_bound);
    let next = rk4_step(model, &sim.state, u, sim.true_params.as_slice(), &d, dt);
    if !next.is_finite() {
        return Err(Error::NonFinite("simulation state"));
    }
    sim.state = next;
    sim.time += dt;
    Ok(())
}

/// Build a measurement record from an arbitrary state with injected noise.
/// `z = Phi(x) theta* + noise`, so the LIP residual bound holds whenever
/// `||noise||_inf <= meas_bound`.
pub fn measure_from_state(
    model: &SystemModel,
    state: &State,
    _u: &Vector3<f64>,
    true_params: &DVector<f64>,
    noise: &Vector3<f64>,
) -> RegressorRecord {
    let phi = model.regressor_matrix(&state.vel);
    let mut z = &phi * true_params;
    for i in 0..3 {
        z[i] += noise[i];
    }
    RegressorRecord {
        phi,
        z,
        noise_bound: model.meas_bound,
    }
}

/// Sample a measurement of the current simulator state.
pub fn measure(model: &SystemModel, sim: &mut SimState, u: &Vector3<f64>) -> RegressorRecord {
    let noise = sim.sample_meas_noise(model.meas_bound);
    let state = sim.state;
    let params = sim.true_params.clone();
    measure_from_state(model, &state, u, &params, &noise)
}
