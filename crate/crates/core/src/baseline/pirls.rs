//! Penalized Poisson regression by Newton / iteratively reweighted least squares.
//!
//! Observations are split into blocks that share no coefficients, so the
//! likelihood Hessian is block diagonal; the penalty couples the blocks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One block of observations with its own coefficient slice.
pub struct PoissonBlock<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: Vec<f64>,
    pub offset: Vec<f64>,
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PirlsOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Largest accepted Newton step at convergence.
    pub step_tol: f64,
    /// Stop as soon as the gradient max-norm is below this value (0 disables).
    pub grad_tol: f64,
}

impl Default for PirlsOptions {
    fn default() -> Self {
        PirlsOptions { max_iter: 200, rel_tol: 1e-9, step_tol: 1e-6, grad_tol: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct PirlsFit {
    pub coef: DVector<f64>,
    /// Penalized negative Hessian `XᵀWX + P` at the optimum.
    pub hessian: DMatrix<f64>,
    pub deviance: f64,
    pub edf: f64,
    pub iterations: usize,
    /// Penalized objective `Dev/2 + ½ γᵀPγ` per iteration.
    pub trace: Vec<f64>,
}

struct Eval {
    objective: f64,
    deviance: f64,
    grad: DVector<f64>,
    info_blocks: Vec<DMatrix<f64>>,
}

fn deviance_term(y: f64, mu: f64) -> f64 {
    let a = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
    2.0 * (a - (y - mu))
}

fn evaluate(blocks: &[PoissonBlock], penalty: &DMatrix<f64>, coef: &DVector<f64>, with_info: bool) -> Option<Eval> {
    let k = blocks[0].x.ncols();
    let mut deviance = 0.0;
    let mut grad = DVector::zeros(coef.len());
    let mut info_blocks = Vec::new();
    for (b, block) in blocks.iter().enumerate() {
        let gamma = coef.rows(b * k, k);
        let eta = block.x * gamma;
        let mut score = DVector::zeros(block.y.len());
        let mut wmu = DVector::zeros(block.y.len());
        for i in 0..block.y.len() {
            if block.weight[i] == 0.0 {
                continue;
            }
            let mu = (eta[i] + block.offset[i]).exp();
            if !mu.is_finite() || mu <= 0.0 {
                return None;
            }
            deviance += block.weight[i] * deviance_term(block.y[i], mu);
            score[i] = block.weight[i] * (block.y[i] - mu);
            wmu[i] = block.weight[i] * mu;
        }
        grad.rows_mut(b * k, k).copy_from(&(block.x.transpose() * score));
        if with_info {
            let mut xw = block.x.clone();
            for (i, mut row) in xw.row_iter_mut().enumerate() {
                row *= wmu[i];
            }
            info_blocks.push(block.x.transpose() * xw);
        }
    }
    let pg = penalty * coef;
    let objective = 0.5 * deviance + 0.5 * coef.dot(&pg);
    grad -= pg;
    Some(Eval { objective, deviance, grad, info_blocks })
}

fn assemble_hessian(info: &[DMatrix<f64>], penalty: &DMatrix<f64>) -> DMatrix<f64> {
    let mut h = penalty.clone();
    let k = info[0].nrows();
    for (b, m) in info.iter().enumerate() {
        let mut view = h.view_mut((b * k, b * k), (k, k));
        view += m;
    }
    h
}

/// Solves `H δ = g` with symmetric Jacobi scaling for conditioning.
fn scaled_solve(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let d = DVector::from_iterator(h.nrows(), h.diagonal().iter().map(|&v| 1.0 / v.abs().max(1e-300).sqrt()));
    let hs = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * d[i] * d[j]);
    let gs = g.component_mul(&d);
    let sol = match hs.clone().cholesky() {
        Some(c) => c.solve(&gs),
        None => {
            let ridge = &hs + DMatrix::identity(h.nrows(), h.ncols()) * 1e-10;
            ridge
                .cholesky()
                .ok_or_else(|| Error::numerical("penalized information matrix is not positive definite"))?
                .solve(&gs)
        }
    };
    Ok(sol.component_mul(&d))
}

/// Minimizes `Dev(γ)/2 + ½ γᵀPγ` starting from `init`.
pub fn fit_penalized_poisson(
    blocks: &[PoissonBlock],
    penalty: &DMatrix<f64>,
    init: DVector<f64>,
    opts: PirlsOptions,
) -> Result<PirlsFit> {
    if blocks.iter().all(|b| b.weight.iter().all(|&w| w == 0.0)) {
        return Err(Error::validation("no usable observations: every week is masked"));
    }
    let mut coef = init;
    let mut cur = evaluate(blocks, penalty, &coef, true)
        .ok_or_else(|| Error::numerical("non-finite Poisson mean at the initial coefficients"))?;
    let mut trace = vec![cur.objective];
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        if cur.grad.amax() < opts.grad_tol {
            break;
        }
        iterations = it + 1;
        let h = assemble_hessian(&cur.info_blocks, penalty);
        let step = scaled_solve(&h, &cur.grad)?;
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let cand = &coef + &step * t;
            if let Some(e) = evaluate(blocks, penalty, &cand, true) {
                if e.objective <= cur.objective + 1e-12 * cur.objective.abs() {
                    next = Some((cand, e));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, e)) = next else {
            if cur.grad.amax() < 1e-6 {
                break;
            }
            return Err(Error::numerical(
                "penalized Poisson fit: step halving failed to find a finite decrease",
            ));
        };
        let change = (cur.objective - e.objective).abs() / (cur.objective.abs() + 1.0);
        coef = cand;
        cur = e;
        trace.push(cur.objective);
        if change < opts.rel_tol && step.amax() * t < opts.step_tol {
            break;
        }
    }
    let info = assemble_hessian(&cur.info_blocks, &DMatrix::zeros(penalty.nrows(), penalty.ncols()));
    let hessian = assemble_hessian(&cur.info_blocks, penalty);
    let h_inv = hessian
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| crate::linalg::pseudo_inverse_sym(&hessian, 1e-14));
    let edf = (&h_inv * &info).trace();
    Ok(PirlsFit {
        coef,
        hessian,
        deviance: cur.deviance,
        edf,
        iterations,
        trace,
    })
}

/// Gradient of `−ℓ(γ) + ½γᵀPγ` at `coef`, for stationarity checks.
pub fn penalized_gradient(blocks: &[PoissonBlock], penalty: &DMatrix<f64>, coef: &DVector<f64>) -> Option<DVector<f64>> {
    evaluate(blocks, penalty, coef, false).map(|e| -e.grad)
}

/// Penalized objective `Dev/2 + ½γᵀPγ` at `coef`.
pub fn penalized_objective(blocks: &[PoissonBlock], penalty: &DMatrix<f64>, coef: &DVector<f64>) -> Option<f64> {
    evaluate(blocks, penalty, coef, false).map(|e| e.objective)
}
