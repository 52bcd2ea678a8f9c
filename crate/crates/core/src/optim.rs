//! Damped Newton maximizer with Levenberg shifts and backtracking.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    /// Stop when the predicted Newton gain falls below `gain_tol·(1 + |f|)`.
    pub gain_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { max_iter: 500, grad_tol: 1e-6, rel_tol: 1e-9, gain_tol: 1e-15 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Objective callback: `order == 0` asks for the value only (gradient and
/// Hessian may be left empty); `order == 2` asks for all three. `None`
/// signals a point outside the domain.
pub(crate) type Objective<'a> =
    dyn FnMut(&DVector<f64>, usize) -> Option<(f64, DVector<f64>, DMatrix<f64>)> + 'a;

pub(crate) fn maximize(x0: DVector<f64>, obj: &mut Objective<'_>, opts: NewtonOptions) -> Option<NewtonResult> {
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g, mut h) = obj(&x, 2)?;
    if !f.is_finite() {
        return None;
    }
    let mut lambda = 0.0;
    for it in 0..opts.max_iter {
        if g.iter().all(|v| v.is_finite()) && g.norm() < opts.grad_tol {
            return Some(NewtonResult { x, f, grad: g, hess: h, iterations: it, converged: true });
        }
        let neg_h = -&h;
        // predicted gain of a full Newton step at round-off level
        if let Some(ch) = neg_h.clone().cholesky() {
            let dec = g.dot(&ch.solve(&g));
            if dec.is_finite() && 0.5 * dec < opts.gain_tol * (1.0 + f.abs()) {
                return Some(NewtonResult { x, f, grad: g, hess: h, iterations: it, converged: true });
            }
        }
        let scale = (0..n).map(|i| neg_h[(i, i)].abs()).fold(1e-8, f64::max);
        let mut dir = None;
        let mut lam = lambda;
        for _ in 0..40 {
            let m = &neg_h + DMatrix::identity(n, n) * lam;
            if let Some(ch) = m.cholesky() {
                dir = Some(ch.solve(&g));
                break;
            }
            lam = if lam == 0.0 { 1e-6 * scale } else { lam * 10.0 };
        }
        let d = dir?;
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * t;
            if let Some((fv, _, _)) = obj(&xn, 0) {
                if fv.is_finite() && fv >= f + 1e-4 * t * slope {
                    accepted = Some(xn);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(xn) = accepted else {
            // no ascent possible along the damped direction: treat as stationary
            let converged = g.norm() < 1e3 * opts.grad_tol;
            return Some(NewtonResult { x, f, grad: g, hess: h, iterations: it, converged });
        };
        let (fn_, gn, hn) = obj(&xn, 2)?;
        let df = fn_ - f;
        x = xn;
        f = fn_;
        g = gn;
        h = hn;
        lambda = if t == 1.0 { lam * 0.1 } else { lam.max(1e-6 * scale) * 4.0 };
        if lambda < 1e-12 * scale {
            lambda = 0.0;
        }
        if t == 1.0 && lam == 0.0 && df.abs() < opts.rel_tol * (1.0 + f.abs()) && g.norm() < 1e2 {
            return Some(NewtonResult { x, f, grad: g, hess: h, iterations: it + 1, converged: true });
        }
    }
    Some(NewtonResult { x, f, grad: g, hess: h, iterations: opts.max_iter, converged: false })
}
