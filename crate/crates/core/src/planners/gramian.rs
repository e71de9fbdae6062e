//! Finite-horizon excitation Gramian `G = ∫ Φᵀ Φ dτ` along a trajectory,
//! evaluated by trapezoidal quadrature over the transcription knots, plus
//! the derivatives the informative planner needs: the VJP of `ΦᵀΦ` with
//! respect to velocity and the smallest eigenvalue with its eigenvector.

use crate::dynamics::{DragModel, SystemModel};
use crate::trajectory::NominalTrajectory;
use nalgebra::{DMatrix, DVector, Vector3};

#[derive(Debug, Clone)]
pub struct GramianAccumulator {
    pub g: DMatrix<f64>,
    pub horizon: f64,
}

impl GramianAccumulator {
    pub fn lambda_min(&self) -> f64 {
        lambda_min_sym(&self.g).0
    }

    pub fn log_det(&self, eta: f64) -> f64 {
        let p = self.g.nrows();
        let reg = &self.g + DMatrix::identity(p, p) * eta;
        match reg.clone().cholesky() {
            Some(c) => 2.0 * (0..p).map(|i| c.l_dirty()[(i, i)].ln()).sum::<f64>(),
            // Regularized matrix should be PD; fall back to the determinant.
            None => reg.determinant().max(f64::MIN_POSITIVE).ln(),
        }
    }
}

/// `ΦᵀΦ` as a function of velocity alone: both drag structures reduce to
/// polynomials in the speed.
pub fn phi_outer(model: &SystemModel, v: &Vector3<f64>) -> DMatrix<f64> {
    let s2 = v.norm_squared();
    let s = s2.sqrt();
    match model.drag {
        DragModel::Scalar => DMatrix::from_element(1, 1, s2 * s2),
        DragModel::Vector => {
            DMatrix::from_row_slice(2, 2, &[s2, s * s2, s * s2, s2 * s2])
        }
    }
}

/// Pullback of a cotangent `w` on `ΦᵀΦ` to a gradient on velocity:
/// `Σ_ab w_ab ∂(ΦᵀΦ)_ab/∂v`.
pub fn phi_outer_vjp(model: &SystemModel, v: &Vector3<f64>, w: &DMatrix<f64>) -> Vector3<f64> {
    let s = v.norm();
    match model.drag {
        DragModel::Scalar => v * (4.0 * s * s * w[(0, 0)]),
        DragModel::Vector => {
            let coeff =
                2.0 * w[(0, 0)] + 3.0 * s * (w[(0, 1)] + w[(1, 0)]) + 4.0 * s * s * w[(1, 1)];
            v * coeff
        }
    }
}

/// Trapezoidal quadrature of `ΦᵀΦ` over the trajectory knots.
pub fn gramian(traj: &NominalTrajectory, model: &SystemModel) -> GramianAccumulator {
    let p = model.param_dim();
    let mut g = DMatrix::zeros(p, p);
    let n = traj.n_seg();
    for (k, state) in traj.states.iter().enumerate() {
        let w = if k == 0 || k == n { 0.5 } else { 1.0 } * traj.seg;
        g += phi_outer(model, &state.vel) * w;
    }
    GramianAccumulator {
        g,
        horizon: traj.duration(),
    }
}

/// Per-knot trapezoid weight used when differentiating the Gramian.
pub fn knot_weight(traj: &NominalTrajectory, k: usize) -> f64 {
    if k == 0 || k == traj.n_seg() {
        0.5 * traj.seg
    } else {
        traj.seg
    }
}

/// Smallest eigenvalue and a unit eigenvector of a symmetric matrix;
/// closed-form for the 1x1 and 2x2 cases the drag models produce.
pub fn lambda_min_sym(g: &DMatrix<f64>) -> (f64, DVector<f64>) {
    match g.nrows() {
        1 => (g[(0, 0)], DVector::from_element(1, 1.0)),
        2 => {
            let (a, b, c) = (g[(0, 0)], 0.5 * (g[(0, 1)] + g[(1, 0)]), g[(1, 1)]);
            let half_gap = 0.5 * (a - c);
            let rad = (half_gap * half_gap + b * b).sqrt();
            let lam = 0.5 * (a + c) - rad;
            let v = if b.abs() > 1e-300 {
                DVector::from_vec(vec![lam - c, b])
            } else if a <= c {
                DVector::from_vec(vec![1.0, 0.0])
            } else {
                DVector::from_vec(vec![0.0, 1.0])
            };
            let n = v.norm();
            (lam, if n > 0.0 { v / n } else { DVector::from_vec(vec![1.0, 0.0]) })
        }
        _ => {
            let eig = g.clone().symmetric_eigen();
            let (mut idx, mut best) = (0, f64::INFINITY);
            for (i, &l) in eig.eigenvalues.iter().enumerate() {
                if l < best {
                    best = l;
                    idx = i;
                }
            }
            (best, eig.eigenvectors.column(idx).into_owned())
        }
    }
}
