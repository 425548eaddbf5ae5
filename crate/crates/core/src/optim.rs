//! Quasi-Newton minimization.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence when the gradient max-norm drops below this value.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` with BFGS and a backtracking Armijo line search.
/// `fg` returns the objective and its gradient.
pub fn bfgs<F>(x0: DVector<f64>, mut fg: F, opts: BfgsOptions) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fg(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    for iter in 0..opts.max_iter {
        if g.amax() < opts.grad_tol {
            return BfgsResult { x, f, grad: g, iterations: iter, converged: true };
        }
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            // lost descent direction: restart from steepest descent
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        if first {
            // keep the first step modest
            let scale = 1.0 / g.amax().max(1.0);
            dir *= scale;
            slope *= scale;
            first = false;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &dir * step;
            let (fnew, gnew) = fg(&xn);
            if fnew.is_finite() && fnew <= f + 1e-4 * step * slope {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            // no decrease possible along the direction; report current point
            let converged = g.amax() < opts.grad_tol;
            return BfgsResult { x, f, grad: g, iterations: iter, converged };
        };
        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        x = xn;
        f = fnew;
        g = gnew;
    }
    let converged = g.amax() < opts.grad_tol;
    BfgsResult { x, f, grad: g, iterations: opts.max_iter, converged }
}
