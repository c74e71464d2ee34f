//! A small Levenberg-Marquardt solver with finite-difference Jacobians.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost decrease falls below this.
    pub ftol: f64,
    /// Stop when the step is this small relative to the parameters.
    pub xtol: f64,
    /// Stop when the gradient infinity norm falls below this.
    pub gtol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 200, ftol: 1e-15, xtol: 1e-14, gtol: 1e-16, initial_damping: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub x: DVector<f64>,
    /// Sum of squared residuals at `x`.
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost_of(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Central-difference Jacobian of `f` at `x`.
pub fn jacobian<F>(f: &F, x: &DVector<f64>, m: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut j = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for c in 0..n {
        let h = 1e-6 * x[c].abs().max(1.0);
        xp[c] = x[c] + h;
        let fp = f(&xp);
        xp[c] = x[c] - h;
        let fm = f(&xp);
        xp[c] = x[c];
        j.set_column(c, &((fp - fm) / (2.0 * h)));
    }
    j
}

/// Minimizes `|f(x)|^2`. Steps are only accepted when they lower the cost,
/// so the returned cost never exceeds the initial one.
pub fn levenberg_marquardt<F>(f: F, x0: DVector<f64>, opts: &LmOptions) -> LmOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = x0;
    let mut r = f(&x);
    let initial_cost = cost_of(&r);
    let mut cost = initial_cost;
    let mut mu = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    if !cost.is_finite() {
        return LmOutcome { x, cost, initial_cost, iterations, converged };
    }
    while iterations < opts.max_iter {
        iterations += 1;
        if cost < 1e-30 {
            converged = true;
            break;
        }
        let j = jacobian(&f, &x, r.len());
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        if g.amax() < opts.gtol {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += mu * (jtj[(d, d)] + 1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    mu *= 4.0;
                    continue;
                }
            };
            let trial = &x + &step;
            let rt = f(&trial);
            let ct = cost_of(&rt);
            if ct.is_finite() && ct < cost {
                let rel = (cost - ct) / cost.max(1e-300);
                let small_step = step.norm() <= opts.xtol * (x.norm() + opts.xtol);
                x = trial;
                r = rt;
                cost = ct;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if rel < opts.ftol || small_step {
                    converged = true;
                }
                break;
            }
            mu *= 2.0;
        }
        if !accepted {
            // no descent direction left at any damping
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    LmOutcome { x, cost, initial_cost, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let out = levenberg_marquardt(f, DVector::from_vec(vec![-1.2, 1.0]), &LmOptions::default());
        assert!((out.x[0] - 1.0).abs() < 1e-8 && (out.x[1] - 1.0).abs() < 1e-8, "{:?}", out.x);
        assert!(out.converged);
    }

    #[test]
    fn exponential_fit() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-0.7 * t).exp() + 0.3).collect();
        let f = |p: &DVector<f64>| DVector::from_iterator(ts.len(), ts.iter().zip(&ys).map(|(t, y)| p[0] * (-p[1] * t).exp() + p[2] - y));
        let out = levenberg_marquardt(f, DVector::from_vec(vec![1.0, 0.2, 0.0]), &LmOptions::default());
        assert!((out.x[0] - 2.5).abs() < 1e-7);
        assert!((out.x[1] - 0.7).abs() < 1e-7);
        assert!(out.cost <= out.initial_cost);
    }

    #[test]
    fn fixed_point_does_not_move() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] - 3.0, 2.0 * (x[1] + 1.0)]);
        let x0 = DVector::from_vec(vec![3.0, -1.0]);
        let out = levenberg_marquardt(f, x0.clone(), &LmOptions::default());
        assert_eq!(out.x, x0);
        assert_eq!(out.cost, 0.0);
    }
}
