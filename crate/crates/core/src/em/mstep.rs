use nalgebra::{DMatrix, DVector};

use crate::baseline::{fit_penalized_poisson, PirlsOptions, PoissonBlock};
use crate::error::{Error, Result};
use crate::optim::{bfgs, BfgsOptions};
use crate::regime::{center, Icar, RegimeData, RegimeParams, N_STATES};

use super::estep::{beta_objective, beta_vector, spatial_objective, with_beta};
use super::FilterState;

/// Weighted Poisson regression for `α_s` with offsets `log b̂` and weights
/// `P(S_t = s)`. Returns `None` when the state carries no weight.
pub fn m_step_alpha(data: &RegimeData, filter: &FilterState, params: &RegimeParams, s: usize) -> Result<Option<Vec<Vec<f64>>>> {
    let width = data.state_z[s - 1].width();
    if !data.shocks || width == 0 {
        return Ok(None);
    }
    let total: f64 = filter.regions.iter().flat_map(|f| f.marginal.iter().map(|m| m[s])).sum();
    if total <= 0.0 {
        log::warn!("state {s} is never visited under the filtered probabilities; its coefficients are left unchanged");
        return Ok(None);
    }
    let n_groups = data.n_groups();
    let mut designs = Vec::with_capacity(n_groups);
    let mut blocks_data = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let ages: Vec<usize> = (0..data.n_ages()).filter(|&x| data.group_of_age[x] == g).collect();
        let n = data.n_regions() * data.n_weeks() * ages.len();
        let mut x = DMatrix::zeros(n, width);
        let (mut y, mut offset, mut weight) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let mut row = 0;
        for r in 0..data.n_regions() {
            for k in 0..data.n_weeks() {
                let z = data.state_z[s - 1].row(r, k);
                for &a in &ages {
                    for (j, v) in z.iter().enumerate() {
                        x[(row, j)] = *v;
                    }
                    y.push(data.deaths(r, a, k));
                    offset.push(data.b_hat(r, a, k).ln());
                    weight.push(filter.regions[r].marginal[k][s]);
                    row += 1;
                }
            }
        }
        designs.push(x);
        blocks_data.push((y, offset, weight));
    }
    let blocks: Vec<PoissonBlock> = designs
        .iter()
        .zip(blocks_data)
        .map(|(x, (y, offset, weight))| PoissonBlock { x, y, offset, weight })
        .collect();
    let init = DVector::from_iterator(n_groups * width, params.alpha(s).iter().flatten().copied());
    let penalty = DMatrix::zeros(n_groups * width, n_groups * width);
    let opts = PirlsOptions { max_iter: 100, rel_tol: 0.0, step_tol: 0.0, grad_tol: 1e-8 };
    let fit = fit_penalized_poisson(&blocks, &penalty, init, opts)?;
    Ok(Some((0..n_groups).map(|g| fit.coef.rows(g * width, width).iter().copied().collect()).collect()))
}

/// `ρ_j = (1/R) Σ_r P(S_1 = j)`.
pub fn m_step_rho(filter: &FilterState) -> [f64; N_STATES] {
    let n = filter.regions.len() as f64;
    let mut rho = [0.0; N_STATES];
    for f in &filter.regions {
        for j in 0..N_STATES {
            rho[j] += f.marginal[0][j] / n;
        }
    }
    let sum: f64 = rho.iter().sum();
    rho.map(|v| v / sum)
}

/// Outcome of the β block.
#[derive(Debug, Clone)]
pub struct BetaStep {
    pub params: RegimeParams,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

const BETA_TOL: f64 = 1e-6;
const BETA_MAX_ITER: usize = 500;
// BFGS stalls on flat ridges; the remaining budget goes to Newton steps
const BFGS_ITER: usize = 50;

fn fd_hessian<F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>>(x: &DVector<f64>, f: &mut F) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-5 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        xp[j] += step;
        let mut xm = x.clone();
        xm[j] -= step;
        let gp = f(&xp)?.1;
        let gm = f(&xm)?.1;
        h.set_column(j, &((gp - gm) / (2.0 * step)));
    }
    Ok(crate::linalg::symmetrize(&h))
}

/// Maximizes the transition part of Q minus `(1/2) log det S⁻¹` over every β
/// block jointly. BFGS first, then Newton steps on a finite-difference
/// Hessian of the analytic gradient if the tolerance was not reached, 500
/// iterations in total.
pub fn m_step_beta(
    data: &RegimeData,
    filter: &FilterState,
    params: &RegimeParams,
    u: &[f64],
    tau: f64,
    icar: &Icar,
) -> Result<BetaStep> {
    let x0 = DVector::from_vec(beta_vector(params));
    if x0.is_empty() {
        let (objective, _) = beta_objective(data, filter, params, u, tau, icar)?;
        return Ok(BetaStep { params: params.clone(), objective, grad_norm: 0.0, iterations: 0 });
    }
    // negated objective for minimization
    let mut eval = |b: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (f, g) = beta_objective(data, filter, &with_beta(params, b.as_slice()), u, tau, icar)?;
        Ok((-f, -DVector::from_vec(g)))
    };
    let mut failure = None;
    let res = bfgs(
        x0,
        |b| match eval(b) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                (f64::INFINITY, DVector::zeros(b.len()))
            }
        },
        BfgsOptions { max_iter: BFGS_ITER, grad_tol: BETA_TOL },
    );
    if let Some(e) = failure {
        if !res.f.is_finite() {
            return Err(e);
        }
    }
    let (mut x, mut f, mut g) = (res.x, res.f, res.grad);
    let mut iterations = res.iterations;
    let mut polish = 0;
    while g.amax() >= BETA_TOL && iterations + polish < BETA_MAX_ITER {
        polish += 1;
        let mut h = fd_hessian(&x, &mut eval)?;
        let mut ridge = 0.0;
        let chol = loop {
            if let Some(c) = h.clone().cholesky() {
                break c;
            }
            ridge = if ridge == 0.0 { 1e-8 * h.diagonal().amax().max(1.0) } else { ridge * 10.0 };
            h += DMatrix::identity(x.len(), x.len()) * ridge;
            if ridge > 1e12 {
                return Err(Error::numerical("transition M-step: Hessian could not be regularized"));
            }
        };
        let step = chol.solve(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &x - &step * t;
            let (fc, gc) = eval(&cand)?;
            if fc <= f + 1e-12 * f.abs() {
                x = cand;
                f = fc;
                g = gc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    iterations += polish;
    if g.amax() >= BETA_TOL {
        return Err(Error::numerical(format!(
            "transition M-step did not converge: gradient max-norm {:.3e} after {iterations} iterations (β = {:?})",
            g.amax(),
            x.as_slice()
        )));
    }
    Ok(BetaStep { params: with_beta(params, x.as_slice()), objective: -f, grad_norm: g.amax(), iterations })
}

/// Newton ascent on the expected log joint density of the transitions and
/// `u`, with the sum-to-zero constraint imposed through a Lagrange multiplier.
pub fn update_spatial_mode(
    data: &RegimeData,
    filter: &FilterState,
    params: &RegimeParams,
    tau: f64,
    icar: &Icar,
    u_init: &[f64],
) -> Result<Vec<f64>> {
    let n = data.n_regions();
    let mut u = u_init.to_vec();
    center(&mut u);
    if n == 1 {
        return Ok(u);
    }
    let (mut value, mut grad, mut h) = spatial_objective(data, filter, params, &u, tau, icar);
    for _ in 0..100 {
        let mut kkt = DMatrix::zeros(n + 1, n + 1);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(icar.laplacian() * tau));
        for r in 0..n {
            kkt[(r, r)] += h[r];
            kkt[(r, n)] = 1.0;
            kkt[(n, r)] = 1.0;
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from_slice(&grad);
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("spatial-mode Newton system is singular"))?;
        let step: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let mut t = 1.0;
        loop {
            let mut cand: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            center(&mut cand);
            let (v, g, hh) = spatial_objective(data, filter, params, &cand, tau, icar);
            if v >= value - 1e-12 * value.abs() || t < 1e-10 {
                u = cand;
                value = v;
                grad = g;
                h = hh;
                break;
            }
            t *= 0.5;
        }
        let size = step.iter().fold(0.0f64, |m, s| m.max((t * s).abs()));
        if size < 1e-8 {
            return Ok(u);
        }
    }
    Err(Error::numerical(format!("spatial-mode update did not converge in 100 Newton steps (u = {u:?})")))
}
