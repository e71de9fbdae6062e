//! Pre-execution prediction of how much a candidate trajectory will shrink
//! the parameter box: stack the planned regressors, evaluate the support
//! function of the worst-case estimation error set by LP duality, and cap it
//! with the current box width.

pub mod lp;

use crate::dynamics::ParameterBox;
use crate::error::Error;
use lp::{solve_lp, LpProblem, LpStatus};
use nalgebra::{DMatrix, DVector};

/// Planned regressor samples stacked row-wise into one `M x p` matrix.
#[derive(Debug, Clone)]
pub struct StackedRegressor {
    pub a: DMatrix<f64>,
    pub noise_bound: f64,
    pub sample_times: Vec<f64>,
}

impl StackedRegressor {
    /// Stack per-sample regressors (each `c x p`) in time order.
    pub fn stack(
        regressors: &[DMatrix<f64>],
        noise_bound: f64,
        sample_times: Vec<f64>,
    ) -> Result<Self, Error> {
        let Some(first) = regressors.first() else {
            return Err(Error::Config("regressor stack requires at least one sample".into()));
        };
        let p = first.ncols();
        let rows: usize = regressors.iter().map(|r| r.nrows()).sum();
        let mut a = DMatrix::zeros(rows, p);
        let mut at = 0;
        for r in regressors {
            if r.ncols() != p {
                return Err(Error::DimensionMismatch {
                    context: "stacked regressor columns",
                    expected: p,
                    got: r.ncols(),
                });
            }
            a.view_mut((at, 0), (r.nrows(), p)).copy_from(r);
            at += r.nrows();
        }
        Ok(StackedRegressor {
            a,
            noise_bound,
            sample_times,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.a.ncols()
    }

    /// Membership test for the worst-case error set
    /// `E = { e : ||A e||_inf <= 2 w_bar }`.
    pub fn error_set_contains(&self, e: &DVector<f64>) -> bool {
        (&self.a * e).amax() <= 2.0 * self.noise_bound + 1e-12
    }
}

/// Support value along a direction; the unexcited case is explicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportValue {
    Finite(f64),
    Infinite,
}

impl SupportValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, SupportValue::Finite(_))
    }
}

/// Directional width prediction: the current box width capped by the error
/// set's diameter along `d`.
#[derive(Debug, Clone)]
pub struct WidthPrediction {
    pub direction: DVector<f64>,
    pub support: SupportValue,
    pub predicted_width: f64,
}

/// Support function of the error set along `d`:
/// `h = 2 w_bar * min{ ||lambda||_1 : A^T lambda = d }`,
/// infinite when `d` has no preimage (direction never excited).
pub fn support_half_width(stack: &StackedRegressor, d: &DVector<f64>) -> Result<SupportValue, Error> {
    let p = stack.param_dim();
    if d.len() != p {
        return Err(Error::DimensionMismatch {
            context: "support direction",
            expected: p,
            got: d.len(),
        });
    }
    if d.amax() == 0.0 {
        return Err(Error::Config("support direction must be nonzero".into()));
    }
    let m = stack.a.nrows();
    // Split lambda = lambda+ - lambda-, both nonnegative.
    let mut prob = LpProblem::minimize(vec![1.0; 2 * m]).nonnegative();
    for r in 0..p {
        let mut row = Vec::with_capacity(2 * m);
        for i in 0..m {
            row.push(stack.a[(i, r)]);
        }
        for i in 0..m {
            row.push(-stack.a[(i, r)]);
        }
        prob = prob.with_eq(row, d[r]);
    }
    let sol = solve_lp(&prob)?;
    match sol.status {
        LpStatus::Optimal => Ok(SupportValue::Finite(2.0 * stack.noise_bound * sol.value)),
        LpStatus::Infeasible => Ok(SupportValue::Infinite),
        LpStatus::Unbounded => Err(Error::SolverFailure(
            "1-norm minimization reported unbounded".into(),
        )),
    }
}

/// Width bound along `d` after hypothetically executing the stacked samples:
/// `min(box width, 2h)`.
pub fn predicted_width(
    theta: &ParameterBox,
    stack: &StackedRegressor,
    d: &DVector<f64>,
) -> Result<WidthPrediction, Error> {
    let box_w = theta.directional_width(d);
    let support = support_half_width(stack, d)?;
    let predicted = match support {
        SupportValue::Finite(h) => box_w.min(2.0 * h),
        SupportValue::Infinite => box_w,
    };
    Ok(WidthPrediction {
        direction: d.clone(),
        support,
        predicted_width: predicted,
    })
}

/// Coordinate-axis direction set.
pub fn axis_directions(p: usize) -> Vec<DVector<f64>> {
    (0..p)
        .map(|i| DVector::from_fn(p, |j, _| if i == j { 1.0 } else { 0.0 }))
        .collect()
}

/// Average predicted directional-width reduction over a direction set.
pub fn avg_width_reduction(
    theta: &ParameterBox,
    stack: &StackedRegressor,
    directions: &[DVector<f64>],
) -> Result<f64, Error> {
    if directions.is_empty() {
        return Err(Error::Config("direction set must be nonempty".into()));
    }
    let mut total = 0.0;
    for d in directions {
        let pred = predicted_width(theta, stack, d)?;
        total += (theta.directional_width(d) - pred.predicted_width).max(0.0);
    }
    Ok(total / directions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DragModel, SystemModel};
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn dmat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    fn dvec(data: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(data)
    }

    #[test]
    fn stack_concatenates_rows_in_order() {
        let r1 = dmat(3, 1, &[1.0, 2.0, 3.0]);
        let r2 = dmat(3, 1, &[4.0, 5.0, 6.0]);
        let s = StackedRegressor::stack(&[r1, r2], 0.05, vec![0.1, 0.2]).unwrap();
        assert_eq!(s.a.shape(), (6, 1));
        assert_abs_diff_eq!(s.a[(0, 0)], 1.0);
        assert_abs_diff_eq!(s.a[(5, 0)], 6.0);
    }

    #[test]
    fn hover_stack_is_identically_zero() {
        let m = SystemModel::new(DragModel::Scalar, 0.05, 0.0);
        let regs: Vec<DMatrix<f64>> = (0..5).map(|_| m.regressor_matrix(&Vector3::zeros())).collect();
        let s = StackedRegressor::stack(&regs, 0.05, vec![0.0; 5]).unwrap();
        assert_abs_diff_eq!(s.a.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn twenty_vector_drag_samples_stack_to_sixty_rows() {
        let m = SystemModel::new(DragModel::Vector, 0.05, 0.0);
        let mut rng = StdRng::seed_from_u64(2);
        let regs: Vec<DMatrix<f64>> = (0..20)
            .map(|_| m.regressor_matrix(&Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0))))
            .collect();
        let s = StackedRegressor::stack(&regs, 0.05, (0..20).map(|i| i as f64 * 0.1).collect()).unwrap();
        assert_eq!(s.a.shape(), (60, 2));
    }

    #[test]
    fn empty_stack_is_rejected() {
        assert!(StackedRegressor::stack(&[], 0.05, vec![]).is_err());
    }

    #[test]
    fn identity_stack_support_is_the_ball_radius() {
        let s = StackedRegressor {
            a: DMatrix::identity(2, 2),
            noise_bound: 0.1,
            sample_times: vec![],
        };
        let h = support_half_width(&s, &dvec(&[1.0, 0.0])).unwrap();
        match h {
            SupportValue::Finite(v) => assert_abs_diff_eq!(v, 0.2, epsilon = 1e-10),
            _ => panic!("expected finite support"),
        }
    }

    #[test]
    fn unexcited_direction_has_infinite_support() {
        let s = StackedRegressor {
            a: dmat(1, 2, &[1.0, 0.0]),
            noise_bound: 0.1,
            sample_times: vec![],
        };
        let h = support_half_width(&s, &dvec(&[0.0, 1.0])).unwrap();
        assert_eq!(h, SupportValue::Infinite);
    }

    #[test]
    fn diagonal_stack_matches_vertex_enumeration() {
        let s = StackedRegressor {
            a: dmat(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            noise_bound: 0.1,
            sample_times: vec![],
        };
        let d = dvec(&[1.0, 0.0]);
        match support_half_width(&s, &d).unwrap() {
            SupportValue::Finite(h) => {
                assert_abs_diff_eq!(h, 0.2, epsilon = 1e-10);
                let oracle = error_set_width_oracle(&s, &d).unwrap();
                assert_abs_diff_eq!(2.0 * h, oracle, epsilon = 1e-10);
            }
            _ => panic!("expected finite support"),
        }
    }

    #[test]
    fn hover_prediction_collapses_to_box_width() {
        let theta = ParameterBox::new(vec![0.0], vec![1.0]).unwrap();
        let s = StackedRegressor {
            a: DMatrix::zeros(3, 1),
            noise_bound: 0.05,
            sample_times: vec![],
        };
        let p = predicted_width(&theta, &s, &dvec(&[1.0])).unwrap();
        assert_eq!(p.support, SupportValue::Infinite);
        assert_abs_diff_eq!(p.predicted_width, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_prediction_takes_the_smaller_bound() {
        let theta = ParameterBox::new(vec![0.0], vec![1.0]).unwrap();
        let s = StackedRegressor {
            a: dmat(1, 1, &[1.0]),
            noise_bound: 0.1,
            sample_times: vec![],
        };
        let p = predicted_width(&theta, &s, &dvec(&[1.0])).unwrap();
        assert_abs_diff_eq!(p.predicted_width, 0.4, epsilon = 1e-10);
        assert!(p.predicted_width <= theta.directional_width(&dvec(&[1.0])));
    }

    #[test]
    fn prediction_upper_bounds_grid_width_of_the_intersection() {
        let mut rng = StdRng::seed_from_u64(14);
        let theta = ParameterBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        for _ in 0..20 {
            let a = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
            let s = StackedRegressor {
                a,
                noise_bound: 0.05,
                sample_times: vec![],
            };
            let star = dvec(&[rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]);
            let n = 200;
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for i in 0..=n {
                for j in 0..=n {
                    let t = dvec(&[i as f64 / n as f64, j as f64 / n as f64]);
                    if s.error_set_contains(&(&t - &star)) {
                        lo[0] = lo[0].min(t[0]);
                        lo[1] = lo[1].min(t[1]);
                        hi[0] = hi[0].max(t[0]);
                        hi[1] = hi[1].max(t[1]);
                    }
                }
            }
            for (axis, d) in axis_directions(2).iter().enumerate() {
                let p = predicted_width(&theta, &s, d).unwrap();
                if hi[axis] > lo[axis] {
                    assert!(
                        p.predicted_width >= hi[axis] - lo[axis] - 1e-9,
                        "predicted {} < grid {}",
                        p.predicted_width,
                        hi[axis] - lo[axis]
                    );
                }
            }
        }
    }

    #[test]
    fn reduction_is_zero_without_excitation() {
        let theta = ParameterBox::new(vec![0.0], vec![1.0]).unwrap();
        let s = StackedRegressor {
            a: DMatrix::zeros(3, 1),
            noise_bound: 0.05,
            sample_times: vec![],
        };
        let dw = avg_width_reduction(&theta, &s, &axis_directions(1)).unwrap();
        assert_abs_diff_eq!(dw, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_reduction_complements_the_prediction() {
        let theta = ParameterBox::new(vec![0.0], vec![1.0]).unwrap();
        let s = StackedRegressor {
            a: dmat(1, 1, &[1.0]),
            noise_bound: 0.1,
            sample_times: vec![],
        };
        let dw = avg_width_reduction(&theta, &s, &axis_directions(1)).unwrap();
        assert_abs_diff_eq!(dw, 0.6, epsilon = 1e-10);
    }

    #[test]
    fn unexcited_axis_halves_the_average_reduction() {
        let theta = ParameterBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let s = StackedRegressor {
            a: dmat(1, 2, &[1.0, 0.0]),
            noise_bound: 0.1,
            sample_times: vec![],
        };
        let dw = avg_width_reduction(&theta, &s, &axis_directions(2)).unwrap();
        assert_abs_diff_eq!(dw, 0.3, epsilon = 1e-10);
    }

    /// Diameter of `E = {||A e||_inf <= 2 w_bar}` along `d` by enumerating
    /// vertices from all row subsets; `None` when the set is unbounded.
    pub fn error_set_width_oracle(stack: &StackedRegressor, d: &DVector<f64>) -> Option<f64> {
        let p = stack.param_dim();
        let m = stack.a.nrows();
        let bound = 2.0 * stack.noise_bound;
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(2 * m);
        for i in 0..m {
            let r = stack.a.row(i).transpose();
            rows.push((r.clone(), bound));
            rows.push((-r, bound));
        }
        let mut vertices: Vec<DVector<f64>> = Vec::new();
        let mut idx = vec![0usize; p];
        enumerate_subsets(rows.len(), p, 0, &mut idx, &mut |chosen| {
            let mut mat = DMatrix::zeros(p, p);
            let mut rhs = DVector::zeros(p);
            for (r, &row_i) in chosen.iter().enumerate() {
                mat.row_mut(r).copy_from(&rows[row_i].0.transpose());
                rhs[r] = rows[row_i].1;
            }
            if let Some(sol) = mat.lu().solve(&rhs) {
                if sol.iter().all(|v| v.is_finite())
                    && rows.iter().all(|(a, b)| a.dot(&sol) <= b + 1e-7)
                {
                    vertices.push(sol);
                }
            }
        });
        if vertices.is_empty() {
            return None;
        }
        let vals: Vec<f64> = vertices.iter().map(|v| d.dot(v)).collect();
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(hi - lo)
    }

    fn enumerate_subsets(
        n: usize,
        k: usize,
        start: usize,
        idx: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        fn rec(
            n: usize,
            k: usize,
            start: usize,
            depth: usize,
            idx: &mut Vec<usize>,
            f: &mut impl FnMut(&[usize]),
        ) {
            if depth == k {
                f(idx);
                return;
            }
            for i in start..n {
                idx[depth] = i;
                rec(n, k, i + 1, depth + 1, idx, f);
            }
        }
        rec(n, k, start, 0, idx, f);
    }

    fn random_full_rank(rng: &mut StdRng, m: usize, p: usize) -> DMatrix<f64> {
        loop {
            let a = DMatrix::from_fn(m, p, |_, _| rng.gen_range(-1.0..1.0));
            let sv = a.clone().svd(false, false).singular_values;
            if sv[sv.len() - 1] > 0.1 {
                return a;
            }
        }
    }

    #[test]
    fn support_duality_against_vertex_enumeration() {
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..60 {
            let p = rng.gen_range(1..=3usize);
            let m = rng.gen_range(p..=6usize);
            let a = random_full_rank(&mut rng, m, p);
            let s = StackedRegressor {
                a,
                noise_bound: rng.gen_range(0.01..0.2),
                sample_times: vec![],
            };
            let mut d = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
            if d.amax() < 1e-3 {
                d[0] = 1.0;
            }
            match support_half_width(&s, &d).unwrap() {
                SupportValue::Finite(h) => {
                    let oracle = error_set_width_oracle(&s, &d).expect("bounded set");
                    assert_abs_diff_eq!(2.0 * h, oracle, epsilon = 1e-8);
                }
                SupportValue::Infinite => panic!("full-rank stack cannot be unexcited"),
            }
        }
    }

    #[test]
    fn rank_deficient_directions_are_detected_as_infinite() {
        let mut rng = StdRng::seed_from_u64(91);
        for _ in 0..50 {
            // Rank-one stack in two parameters: only multiples of the row
            // direction are excited.
            let row = [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)];
            let scale = rng.gen_range(0.5..2.0);
            let a = dmat(2, 2, &[row[0], row[1], scale * row[0], scale * row[1]]);
            let s = StackedRegressor {
                a,
                noise_bound: 0.05,
                sample_times: vec![],
            };
            // Orthogonal direction is outside the row space.
            let d = dvec(&[-row[1], row[0]]);
            assert_eq!(support_half_width(&s, &d).unwrap(), SupportValue::Infinite);
            let along = dvec(&[row[0], row[1]]);
            assert!(support_half_width(&s, &along).unwrap().is_finite());
        }
    }

    #[test]
    fn error_set_is_symmetric_and_contains_zero() {
        let mut rng = StdRng::seed_from_u64(101);
        for _ in 0..100 {
            let a = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
            let s = StackedRegressor {
                a,
                noise_bound: 0.1,
                sample_times: vec![],
            };
            assert!(s.error_set_contains(&dvec(&[0.0, 0.0])));
            let e = dvec(&[rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]);
            if s.error_set_contains(&e) {
                assert!(s.error_set_contains(&(-&e)));
            }
        }
    }

    #[test]
    fn appending_rows_never_increases_support() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..80 {
            let p = rng.gen_range(1..=3usize);
            let m = rng.gen_range(1..=4usize);
            let a = DMatrix::from_fn(m, p, |_, _| rng.gen_range(-1.0..1.0));
            let extra = DMatrix::from_fn(2, p, |_, _| rng.gen_range(-1.0..1.0));
            let mut grown = DMatrix::zeros(m + 2, p);
            grown.view_mut((0, 0), (m, p)).copy_from(&a);
            grown.view_mut((m, 0), (2, p)).copy_from(&extra);
            let s1 = StackedRegressor {
                a,
                noise_bound: 0.1,
                sample_times: vec![],
            };
            let s2 = StackedRegressor {
                a: grown,
                noise_bound: 0.1,
                sample_times: vec![],
            };
            let mut d = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
            if d.amax() < 1e-3 {
                d[0] = 1.0;
            }
            let h1 = support_half_width(&s1, &d).unwrap();
            let h2 = support_half_width(&s2, &d).unwrap();
            match (h1, h2) {
                (SupportValue::Finite(a), SupportValue::Finite(b)) => {
                    assert!(b <= a + 1e-9, "support grew from {a} to {b}")
                }
                (SupportValue::Infinite, _) => {}
                (SupportValue::Finite(a), SupportValue::Infinite) => {
                    panic!("support became infinite after adding rows (was {a})")
                }
            }
        }
    }

    #[test]
    fn lemma_one_clipping_equivalence() {
        let mut rng = StdRng::seed_from_u64(500);
        let mut both = 0;
        for _ in 0..1000 {
            let p = rng.gen_range(1..=3usize);
            let phi: DMatrix<f64> = DMatrix::from_fn(3, p, |_, _| rng.gen_range(-2.0..2.0));
            let theta: DVector<f64> = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
            let star: DVector<f64> = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
            let w: f64 = rng.gen_range(0.01..0.5);
            let e = &star - &theta;
            let phi_e = &phi * &e;
            // Feasible measurement noise exists iff the clipped choice works.
            let lhs = {
                let mut ok = true;
                for i in 0..3 {
                    let clip = phi_e[i].clamp(-w, w);
                    if (phi_e[i] - clip).abs() > w + 1e-12 {
                        ok = false;
                    }
                }
                ok
            };
            let rhs = phi_e.amax() <= 2.0 * w + 1e-12;
            assert_eq!(lhs, rhs, "phi_e = {phi_e:?}, w = {w}");
            if lhs {
                both += 1;
            }
        }
        assert!(both > 100, "degenerate sampling: only {both} feasible cases");
    }
}
