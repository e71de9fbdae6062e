//! Dense linear programming via the two-phase primal simplex method.
//!
//! Problems are stated over free variables with optional bounds, equality
//! rows, and `<=` rows, then reduced to standard form (`A x = b`, `x >= 0`).
//! The solver classifies every instance as optimal, infeasible, or unbounded;
//! an iteration-limit overrun is reported as an error, never as a wrong
//! status.

use crate::error::Error;
use nalgebra::{DMatrix, DVector};

/// Magnitude below which a candidate pivot element is treated as zero.
const PIVOT_TOL: f64 = 1e-10;
/// Reduced-cost threshold for entering-variable selection.
const COST_TOL: f64 = 1e-9;
/// Phase-one objective threshold for declaring a problem infeasible.
const FEAS_TOL: f64 = 1e-8;
/// Number of Dantzig-rule pivots before falling back to Bland's rule.
const BLAND_AFTER: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Linear program over `n` variables.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub sense: Sense,
    pub objective: Vec<f64>,
    /// Rows `a . x == b`.
    pub eq: Vec<(Vec<f64>, f64)>,
    /// Rows `a . x <= b`.
    pub le: Vec<(Vec<f64>, f64)>,
    /// Per-variable lower bounds (`-inf` for none).
    pub lower: Vec<f64>,
    /// Per-variable upper bounds (`+inf` for none).
    pub upper: Vec<f64>,
}

impl LpProblem {
    pub fn minimize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LpProblem {
            sense: Sense::Minimize,
            objective,
            eq: Vec::new(),
            le: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn maximize(objective: Vec<f64>) -> Self {
        let mut p = Self::minimize(objective);
        p.sense = Sense::Maximize;
        p
    }

    pub fn with_eq(mut self, a: Vec<f64>, b: f64) -> Self {
        self.eq.push((a, b));
        self
    }

    pub fn with_le(mut self, a: Vec<f64>, b: f64) -> Self {
        self.le.push((a, b));
        self
    }

    pub fn with_bounds(mut self, var: usize, lower: f64, upper: f64) -> Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    /// All variables restricted to `x >= 0`.
    pub fn nonnegative(mut self) -> Self {
        for l in self.lower.iter_mut() {
            *l = 0.0;
        }
        self
    }

    fn n(&self) -> usize {
        self.objective.len()
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal point in original variables; empty unless `Optimal`.
    pub x: Vec<f64>,
    /// Optimal objective value in the original sense; 0 unless `Optimal`.
    pub value: f64,
}

/// How one original variable maps into standard-form columns.
#[derive(Clone, Copy)]
enum VarMap {
    /// `x = lower + s[col]`
    Shift { col: usize, lower: f64 },
    /// `x = upper - s[col]`
    Mirror { col: usize, upper: f64 },
    /// `x = s[pos] - s[neg]`
    Split { pos: usize, neg: usize },
}

/// Solve a dense LP, classifying the outcome exactly.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, Error> {
    let n = problem.n();
    if problem.lower.len() != n || problem.upper.len() != n {
        return Err(Error::DimensionMismatch {
            context: "lp variable bounds",
            expected: n,
            got: problem.lower.len().min(problem.upper.len()),
        });
    }
    for (a, _) in problem.eq.iter().chain(problem.le.iter()) {
        if a.len() != n {
            return Err(Error::DimensionMismatch {
                context: "lp constraint row",
                expected: n,
                got: a.len(),
            });
        }
    }

    // Map original variables onto nonnegative standard-form columns.
    let mut maps = Vec::with_capacity(n);
    let mut cols = 0usize;
    let mut extra_le: Vec<(usize, f64)> = Vec::new(); // (column, upper bound on that column)
    for j in 0..n {
        let (l, u) = (problem.lower[j], problem.upper[j]);
        if l.is_finite() {
            maps.push(VarMap::Shift { col: cols, lower: l });
            if u.is_finite() {
                extra_le.push((cols, u - l));
            }
            cols += 1;
        } else if u.is_finite() {
            maps.push(VarMap::Mirror { col: cols, upper: u });
            cols += 1;
        } else {
            maps.push(VarMap::Split {
                pos: cols,
                neg: cols + 1,
            });
            cols += 2;
        }
    }

    // Slack columns enter the cost vector with zero coefficients, so size it
    // for the full standard-form column count up front.
    let m = problem.eq.len() + problem.le.len() + extra_le.len();
    let n_slack = problem.le.len() + extra_le.len();
    let total = cols + n_slack;

    let sign = match problem.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut c = DVector::zeros(total);
    let mut c_const = 0.0;
    for j in 0..n {
        let cj = sign * problem.objective[j];
        match maps[j] {
            VarMap::Shift { col, lower } => {
                c[col] += cj;
                c_const += cj * lower;
            }
            VarMap::Mirror { col, upper } => {
                c[col] -= cj;
                c_const += cj * upper;
            }
            VarMap::Split { pos, neg } => {
                c[pos] += cj;
                c[neg] -= cj;
            }
        }
    }

    // Assemble equality rows: original eq, then le rows with slacks, then
    // bound rows for doubly-bounded variables.
    let mut a = DMatrix::zeros(m, total);
    let mut b = DVector::zeros(m);
    let mut row = 0usize;
    let fill_row = |a: &mut DMatrix<f64>, b: &mut DVector<f64>, row: usize, coeffs: &[f64], rhs: f64| {
        let mut r = rhs;
        for j in 0..n {
            let v = coeffs[j];
            if v == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift { col, lower } => {
                    a[(row, col)] += v;
                    r -= v * lower;
                }
                VarMap::Mirror { col, upper } => {
                    a[(row, col)] -= v;
                    r -= v * upper;
                }
                VarMap::Split { pos, neg } => {
                    a[(row, pos)] += v;
                    a[(row, neg)] -= v;
                }
            }
        }
        b[row] = r;
    };
    for (coeffs, rhs) in &problem.eq {
        fill_row(&mut a, &mut b, row, coeffs, *rhs);
        row += 1;
    }
    let mut slack = cols;
    for (coeffs, rhs) in &problem.le {
        fill_row(&mut a, &mut b, row, coeffs, *rhs);
        a[(row, slack)] = 1.0;
        slack += 1;
        row += 1;
    }
    for &(col, ub) in &extra_le {
        a[(row, col)] = 1.0;
        a[(row, slack)] = 1.0;
        b[row] = ub;
        slack += 1;
        row += 1;
    }

    let outcome = simplex_standard(a, b, &c)?;
    match outcome {
        StandardOutcome::Infeasible => Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            value: 0.0,
        }),
        StandardOutcome::Unbounded => Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            value: 0.0,
        }),
        StandardOutcome::Optimal(s) => {
            let mut x = vec![0.0; n];
            for j in 0..n {
                x[j] = match maps[j] {
                    VarMap::Shift { col, lower } => lower + s[col],
                    VarMap::Mirror { col, upper } => upper - s[col],
                    VarMap::Split { pos, neg } => s[pos] - s[neg],
                };
            }
            let raw: f64 = (0..cols).map(|j| c[j] * s[j]).sum::<f64>() + c_const;
            Ok(LpSolution {
                status: LpStatus::Optimal,
                x,
                value: sign * raw,
            })
        }
    }
}

enum StandardOutcome {
    Optimal(DVector<f64>),
    Infeasible,
    Unbounded,
}

/// Two-phase simplex on `min c.s` s.t. `A s = b`, `s >= 0`.
fn simplex_standard(
    mut a: DMatrix<f64>,
    mut b: DVector<f64>,
    c: &DVector<f64>,
) -> Result<StandardOutcome, Error> {
    let m = a.nrows();
    let n = a.ncols();
    if m == 0 {
        // Unconstrained over the nonnegative orthant.
        if c.iter().any(|&cj| cj < -COST_TOL) {
            return Ok(StandardOutcome::Unbounded);
        }
        return Ok(StandardOutcome::Optimal(DVector::zeros(n)));
    }
    for i in 0..m {
        if b[i] < 0.0 {
            for j in 0..n {
                a[(i, j)] = -a[(i, j)];
            }
            b[i] = -b[i];
        }
    }

    // Phase one: artificial columns n..n+m with unit cost.
    let mut tab = DMatrix::zeros(m, n + m);
    tab.view_mut((0, 0), (m, n)).copy_from(&a);
    for i in 0..m {
        tab[(i, n + i)] = 1.0;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut phase1_cost = DVector::zeros(n + m);
    for j in n..n + m {
        phase1_cost[j] = 1.0;
    }
    let scale = 1.0 + b.amax();
    match run_simplex(&mut tab, &mut b, &mut basis, &phase1_cost, n + m)? {
        SimplexEnd::Unbounded => {
            // Phase one is bounded below by zero; cannot happen.
            return Err(Error::SolverFailure(
                "phase-one subproblem reported unbounded".into(),
            ));
        }
        SimplexEnd::Optimal => {}
    }
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= n)
        .map(|(i, _)| b[i])
        .sum();
    if infeas > FEAS_TOL * scale {
        return Ok(StandardOutcome::Infeasible);
    }

    // Drive any residual artificials out of the basis; rows that admit no
    // pivot are redundant and dropped.
    let mut keep: Vec<usize> = Vec::with_capacity(m);
    for i in 0..m {
        if basis[i] < n {
            keep.push(i);
            continue;
        }
        let mut pivot_col = None;
        for j in 0..n {
            if tab[(i, j)].abs() > PIVOT_TOL {
                pivot_col = Some(j);
                break;
            }
        }
        if let Some(j) = pivot_col {
            pivot(&mut tab, &mut b, &mut basis, i, j);
            keep.push(i);
        }
    }
    let m2 = keep.len();
    let mut tab2 = DMatrix::zeros(m2, n);
    let mut b2 = DVector::zeros(m2);
    let mut basis2 = Vec::with_capacity(m2);
    for (r, &i) in keep.iter().enumerate() {
        tab2.row_mut(r).copy_from(&tab.view((i, 0), (1, n)));
        b2[r] = b[i];
        basis2.push(basis[i]);
    }

    match run_simplex(&mut tab2, &mut b2, &mut basis2, c, n)? {
        SimplexEnd::Unbounded => Ok(StandardOutcome::Unbounded),
        SimplexEnd::Optimal => {
            let mut s = DVector::zeros(n);
            for (i, &v) in basis2.iter().enumerate() {
                if v < n {
                    s[v] = b2[i];
                }
            }
            Ok(StandardOutcome::Optimal(s))
        }
    }
}

enum SimplexEnd {
    Optimal,
    Unbounded,
}

/// Primal simplex iterations on an explicit tableau restricted to the first
/// `active` columns. Dantzig pricing with a Bland fallback for stalls.
fn run_simplex(
    tab: &mut DMatrix<f64>,
    b: &mut DVector<f64>,
    basis: &mut Vec<usize>,
    cost: &DVector<f64>,
    active: usize,
) -> Result<SimplexEnd, Error> {
    let m = tab.nrows();
    let max_iter = 200 + 40 * (m + active);
    for iter in 0..max_iter {
        let bland = iter > BLAND_AFTER;
        let mut entering = None;
        let mut best = -COST_TOL;
        for j in 0..active {
            if basis.contains(&j) {
                continue;
            }
            let mut r = cost[j];
            for i in 0..m {
                let cb = cost[basis[i]];
                if cb != 0.0 {
                    r -= cb * tab[(i, j)];
                }
            }
            if r < best {
                if bland {
                    entering = Some(j);
                    break;
                }
                best = r;
                entering = Some(j);
            }
        }
        let Some(j) = entering else {
            return Ok(SimplexEnd::Optimal);
        };

        let mut leave = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let aij = tab[(i, j)];
            if aij > PIVOT_TOL {
                let ratio = b[i] / aij;
                let better = ratio < best_ratio - 1e-12
                    || (ratio < best_ratio + 1e-12
                        && leave.map_or(true, |l: usize| basis[i] < basis[l]));
                if better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(i) = leave else {
            return Ok(SimplexEnd::Unbounded);
        };
        pivot(tab, b, basis, i, j);
    }
    Err(Error::SolverFailure(format!(
        "simplex iteration limit exceeded ({m} rows)"
    )))
}

fn pivot(tab: &mut DMatrix<f64>, b: &mut DVector<f64>, basis: &mut [usize], row: usize, col: usize) {
    let m = tab.nrows();
    let n = tab.ncols();
    let p = tab[(row, col)];
    for j in 0..n {
        tab[(row, j)] /= p;
    }
    b[row] /= p;
    for i in 0..m {
        if i == row {
            continue;
        }
        let f = tab[(i, col)];
        if f == 0.0 {
            continue;
        }
        for j in 0..n {
            tab[(i, j)] -= f * tab[(row, j)];
        }
        b[i] -= f * b[row];
        if b[i] < 0.0 && b[i] > -1e-11 {
            b[i] = 0.0;
        }
    }
    basis[row] = col;
}
