//! Set-membership identification: intersects the admissible parameter set
//! with the slab constraints implied by each bounded-noise measurement and
//! exposes the axis-aligned box hull of the result.

use crate::dynamics::ParameterBox;
use crate::error::Error;
use crate::widthlp::lp::{solve_lp, LpProblem, LpStatus};
use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;

/// One linear-in-parameter measurement: `z = Phi theta* + w`,
/// `||w||_inf <= noise_bound`.
#[derive(Debug, Clone)]
pub struct RegressorRecord {
    pub phi: DMatrix<f64>,
    pub z: DVector<f64>,
    pub noise_bound: f64,
}

impl RegressorRecord {
    pub fn new(phi: DMatrix<f64>, z: DVector<f64>, noise_bound: f64) -> Self {
        RegressorRecord { phi, z, noise_bound }
    }

    /// Whether a parameter vector satisfies every slab of this record.
    pub fn admits(&self, theta: &DVector<f64>, slack: f64) -> bool {
        let r = &self.z - &self.phi * theta;
        r.amax() <= self.noise_bound + slack
    }
}

/// Feasible parameter set: the initial box intersected with every recorded
/// measurement slab. Recent records are kept explicitly; older information
/// persists through the running box hull, which bounds the LP variables, so
/// the hull never widens when the window slides.
#[derive(Debug, Clone)]
pub struct FeasiblePolytope {
    hull: ParameterBox,
    records: VecDeque<(usize, RegressorRecord)>,
    window: usize,
    next_id: usize,
}

impl FeasiblePolytope {
    pub fn new(initial: ParameterBox, window: usize) -> Self {
        FeasiblePolytope {
            hull: initial,
            records: VecDeque::new(),
            window: window.max(1),
            next_id: 0,
        }
    }

    pub fn hull(&self) -> &ParameterBox {
        &self.hull
    }

    pub fn dim(&self) -> usize {
        self.hull.dim()
    }

    pub fn record_count(&self) -> usize {
        self.next_id
    }

    /// Intersect with a batch of records and refresh the box hull by solving
    /// one min and one max LP per parameter axis.
    pub fn update(&mut self, batch: &[RegressorRecord]) -> Result<(), Error> {
        let p = self.dim();
        for rec in batch {
            if rec.phi.ncols() != p || rec.phi.nrows() != rec.z.len() {
                return Err(Error::DimensionMismatch {
                    context: "regressor record",
                    expected: p,
                    got: rec.phi.ncols(),
                });
            }
            self.records.push_back((self.next_id, rec.clone()));
            self.next_id += 1;
        }
        while self.records.len() > self.window {
            self.records.pop_front();
        }

        // Collect slab rows `a . theta <= b` from the windowed records.
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for (_, rec) in &self.records {
            for i in 0..rec.phi.nrows() {
                let a: Vec<f64> = (0..p).map(|j| rec.phi[(i, j)]).collect();
                let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
                if scale < 1e-13 {
                    // Zero regressor row: carries no information, but a
                    // violated residual still falsifies the noise model.
                    if rec.z[i].abs() > rec.noise_bound + 1e-12 {
                        return Err(self.inconsistent());
                    }
                    continue;
                }
                rows.push((a.clone(), rec.z[i] + rec.noise_bound));
                rows.push((a.iter().map(|v| -v).collect(), -(rec.z[i] - rec.noise_bound)));
            }
        }

        let mut lower = vec![0.0; p];
        let mut upper = vec![0.0; p];
        for axis in 0..p {
            let mut c = vec![0.0; p];
            c[axis] = 1.0;
            lower[axis] = self.support_min(&rows, &c)?;
            for v in c.iter_mut() {
                *v = -*v;
            }
            upper[axis] = -self.support_min(&rows, &c)?;
        }
        for axis in 0..p {
            // Clamp out LP round-off so nesting holds exactly.
            lower[axis] = lower[axis].max(self.hull.lower[axis]).min(self.hull.upper[axis]);
            upper[axis] = upper[axis].min(self.hull.upper[axis]).max(lower[axis]);
        }
        self.hull = ParameterBox::new(lower, upper)?;
        Ok(())
    }

    /// `min c . theta` over the window slabs intersected with the hull box,
    /// solved through the dual so the simplex tableau keeps `p` rows.
    fn support_min(&self, rows: &[(Vec<f64>, f64)], c: &[f64]) -> Result<f64, Error> {
        let p = self.dim();
        // Dual of  min c.x  s.t.  G x <= h  (box folded into G):
        // max -h.y  s.t.  G^T y = -c,  y >= 0.
        let mut all_rows: Vec<(Vec<f64>, f64)> = rows.to_vec();
        for i in 0..p {
            let mut e = vec![0.0; p];
            e[i] = 1.0;
            all_rows.push((e.clone(), self.hull.upper[i]));
            for v in e.iter_mut() {
                *v = -*v;
            }
            all_rows.push((e, -self.hull.lower[i]));
        }
        let h: Vec<f64> = all_rows.iter().map(|(_, b)| *b).collect();
        let mut lp = LpProblem::minimize(h).nonnegative();
        for axis in 0..p {
            let coeffs: Vec<f64> = all_rows.iter().map(|(a, _)| a[axis]).collect();
            lp = lp.with_eq(coeffs, -c[axis]);
        }
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok(-sol.value),
            // Dual unbounded means the primal intersection is empty.
            LpStatus::Unbounded => Err(self.inconsistent()),
            LpStatus::Infeasible => Err(Error::SolverFailure(
                "hull dual reported infeasible despite box rows".into(),
            )),
        }
    }

    fn inconsistent(&self) -> Error {
        Error::InconsistentData {
            records: self.records.iter().map(|(id, _)| *id).collect(),
        }
    }
}
