//! Limited-memory BFGS with Armijo backtracking, used by both trajectory
//! planners. Unconstrained; the planners encode bounds by squashing.

/// Outcome of a minimization run.
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Gradient tolerance reached (as opposed to hitting the budget or a
    /// stalled line search).
    pub converged: bool,
}

const MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;
const MAX_LINE_SEARCH: usize = 30;

/// Minimize `f` starting from `x0` with at most `max_iter` iterations,
/// stopping when the gradient infinity norm drops below `tol_grad`.
pub fn minimize<F>(mut eval: F, x0: &[f64], max_iter: usize, tol_grad: f64) -> MinimizeResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = eval(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        let gnorm = inf_norm(&g);
        if gnorm <= tol_grad {
            return MinimizeResult {
                x,
                f,
                grad_norm: gnorm,
                iterations,
                converged: true,
            };
        }
        iterations += 1;

        let mut d = two_loop(&g, &s_hist, &y_hist, &rho_hist);
        let mut slope = dot(&d, &g);
        if !slope.is_finite() || slope >= 0.0 {
            // Fall back to steepest descent when curvature info is unusable.
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        // Weak-Wolfe line search by bisection: Armijo decrease plus a
        // curvature condition, so the secant pairs keep positive curvature
        // and the inverse-Hessian history stays fresh.
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        let mut step = 1.0f64;
        let mut wolfe = None;
        let mut armijo_only = None;
        for _ in 0..MAX_LINE_SEARCH {
            let trial: Vec<f64> = (0..n).map(|i| x[i] + step * d[i]).collect();
            let (ft, gt) = eval(&trial);
            if !ft.is_finite() || ft > f + ARMIJO_C1 * step * slope {
                hi = step;
            } else {
                let slope_t = dot(&gt, &d);
                armijo_only = Some((trial.clone(), ft, gt.clone()));
                if slope_t < WOLFE_C2 * slope {
                    lo = step;
                } else {
                    wolfe = Some((trial, ft, gt));
                    break;
                }
            }
            step = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo };
            if step <= 0.0 || !step.is_finite() {
                break;
            }
        }
        let Some((xn, fn_, gn)) = wolfe.or(armijo_only) else {
            // Line search stalled; report the best point found.
            return MinimizeResult {
                x,
                f,
                grad_norm: inf_norm(&g),
                iterations,
                converged: false,
            };
        };

        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        x = xn;
        f = fn_;
        g = gn;
    }
    MinimizeResult {
        grad_norm: inf_norm(&g),
        x,
        f,
        iterations,
        converged: false,
    }
}

fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>], rho: &[f64]) -> Vec<f64> {
    let m = s_hist.len();
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; m];
    for i in (0..m).rev() {
        alpha[i] = rho[i] * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    // Scale by the most recent curvature estimate.
    if m > 0 {
        let last = m - 1;
        let yy = dot(&y_hist[last], &y_hist[last]);
        if yy > 0.0 {
            let gamma = 1.0 / (rho[last] * yy);
            for qj in q.iter_mut() {
                *qj *= gamma;
            }
        }
    }
    for i in 0..m {
        let beta = rho[i] * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    for qj in q.iter_mut() {
        *qj = -*qj;
    }
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_bowl_reaches_the_minimum() {
        let r = minimize(
            |x| {
                let f = (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2);
                (f, vec![2.0 * (x[0] - 3.0), 20.0 * (x[1] + 1.0)])
            },
            &[0.0, 0.0],
            100,
            1e-10,
        );
        assert!(r.converged);
        assert_abs_diff_eq!(r.x[0], 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r.x[1], -1.0, epsilon = 1e-8);
    }

    #[test]
    fn rosenbrock_valley_converges() {
        let r = minimize(
            |x| {
                let a = 1.0 - x[0];
                let b = x[1] - x[0] * x[0];
                let f = a * a + 100.0 * b * b;
                (
                    f,
                    vec![-2.0 * a - 400.0 * x[0] * b, 200.0 * b],
                )
            },
            &[-1.2, 1.0],
            500,
            1e-8,
        );
        assert!(
            r.converged,
            "grad norm {} after {} iterations, f = {}, x = {:?}",
            r.grad_norm, r.iterations, r.f, r.x
        );
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn iteration_budget_is_respected() {
        let r = minimize(
            |x| {
                let f = x.iter().map(|v| v.cosh()).sum::<f64>();
                (f, x.iter().map(|v| v.sinh()).collect())
            },
            &[5.0; 8],
            3,
            1e-14,
        );
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }
}
