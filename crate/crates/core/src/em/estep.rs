use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::regime::{
    clamped, log_emissions, logits, row_sensitivity, spatial_precision, transition_from_logits, Icar, RegimeData,
    RegimeParams, N_STATES, TRANSITIONS,
};

use super::FilterState;

/// The expected complete-data log-likelihood split into its sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QValue {
    pub initial: f64,
    pub emission: f64,
    pub transition: f64,
    /// ICAR log density of `u` plus `((R-1)/2) log 2π`.
    pub prior: f64,
    /// `-(1/2) log det S⁻¹` on the sum-to-zero subspace.
    pub log_det: f64,
}

impl QValue {
    pub fn total(&self) -> f64 {
        self.initial + self.emission + self.transition + self.prior + self.log_det
    }
}

fn check_shapes(data: &RegimeData, filter: &FilterState, u: &[f64]) -> Result<()> {
    if filter.regions.len() != data.n_regions() || u.len() != data.n_regions() || filter.n_weeks() != data.n_weeks() {
        return Err(Error::validation("filtered probabilities do not match the data dimensions"));
    }
    Ok(())
}

fn departing(joint: &[[f64; N_STATES]; N_STATES]) -> [f64; N_STATES] {
    joint.map(|row| row.iter().sum())
}

/// `h_r = Σ_t Σ_i P(S_{t-1} = i) m_i (1 - m_i)`, the expected curvature of the
/// transition log-likelihood in `u_r`.
pub fn curvature(data: &RegimeData, filter: &FilterState, params: &RegimeParams, u: &[f64]) -> Vec<f64> {
    (0..data.n_regions())
        .map(|r| {
            let f = &filter.regions[r];
            (1..data.n_weeks())
                .map(|k| {
                    let l = logits(data, params, r, k, u[r]);
                    let m = row_sensitivity(l, &transition_from_logits(l));
                    let w = departing(&f.joint[k]);
                    (0..N_STATES).map(|i| w[i] * m[i] * (1.0 - m[i])).sum::<f64>()
                })
                .sum()
        })
        .collect()
}

/// `S⁻¹ = τ(D − W) + diag(h)` at `(θ, u)` under the given filter weights.
pub fn spatial_hessian(
    data: &RegimeData,
    filter: &FilterState,
    params: &RegimeParams,
    u: &[f64],
    tau: f64,
    icar: &Icar,
) -> DMatrix<f64> {
    spatial_precision(icar, tau, &curvature(data, filter, params, u))
}

fn transition_sum(data: &RegimeData, filter: &FilterState, params: &RegimeParams, u: &[f64]) -> f64 {
    let mut total = 0.0;
    for r in 0..data.n_regions() {
        for k in 1..data.n_weeks() {
            let p = transition_from_logits(logits(data, params, r, k, u[r]));
            let xi = &filter.regions[r].joint[k];
            for i in 0..N_STATES {
                for j in 0..N_STATES {
                    if xi[i][j] > 0.0 {
                        total += xi[i][j] * p[i][j].ln();
                    }
                }
            }
        }
    }
    total
}

/// Expected complete-data log-likelihood at `(θ, u)` with weights from `filter`.
pub fn q_value(
    data: &RegimeData,
    filter: &FilterState,
    params: &RegimeParams,
    u: &[f64],
    tau: f64,
    icar: &Icar,
) -> Result<QValue> {
    check_shapes(data, filter, u)?;
    let mut initial = 0.0;
    let mut emission = 0.0;
    for r in 0..data.n_regions() {
        let f = &filter.regions[r];
        for j in 0..N_STATES {
            if f.marginal[0][j] > 0.0 {
                initial += f.marginal[0][j] * params.rho[j].ln();
            }
        }
        for k in 0..data.n_weeks() {
            let e = log_emissions(data, params, r, k)?;
            for j in 0..N_STATES {
                if f.marginal[k][j] > 0.0 {
                    emission += f.marginal[k][j] * e[j];
                }
            }
        }
    }
    let transition = transition_sum(data, filter, params, u);
    let prior = icar.logdensity(u, tau) + icar.laplace_constant();
    let log_det = -0.5 * icar.constrained_log_det(&spatial_hessian(data, filter, params, u, tau, icar))?;
    Ok(QValue { initial, emission, transition, prior, log_det })
}

/// Gradient of Q in `α_s`, one vector per reduced age group.
pub fn alpha_gradient(data: &RegimeData, filter: &FilterState, params: &RegimeParams, s: usize) -> Vec<Vec<f64>> {
    let width = data.state_z[s - 1].width();
    let mut grad = vec![vec![0.0; width]; data.n_groups()];
    if !data.shocks {
        return grad;
    }
    for r in 0..data.n_regions() {
        for k in 0..data.n_weeks() {
            let w = filter.regions[r].marginal[k][s];
            if w == 0.0 {
                continue;
            }
            let z = data.state_z[s - 1].row(r, k);
            for x in 0..data.n_ages() {
                let g = data.group_of_age[x];
                let eta: f64 = z.iter().zip(&params.alpha(s)[g]).map(|(a, b)| a * b).sum();
                let resid = w * (data.deaths(r, x, k) - data.b_hat(r, x, k) * eta.exp());
                for (gj, zj) in grad[g].iter_mut().zip(z) {
                    *gj += resid * zj;
                }
            }
        }
    }
    grad
}

/// Offsets of each transition block within the concatenated β vector.
pub fn beta_offsets(params: &RegimeParams) -> [usize; 4] {
    let mut out = [0; 4];
    let mut pos = 0;
    for tr in TRANSITIONS {
        out[tr.index()] = pos;
        pos += params.beta(tr).len();
    }
    out
}

/// Concatenated β in the order 01, 02, 11, 22.
pub fn beta_vector(params: &RegimeParams) -> Vec<f64> {
    TRANSITIONS.iter().flat_map(|&tr| params.beta(tr).clone()).collect()
}

pub fn with_beta(params: &RegimeParams, beta: &[f64]) -> RegimeParams {
    let off = beta_offsets(params);
    let mut out = params.clone();
    for tr in TRANSITIONS {
        let b = out.beta_mut(tr);
        let w = b.len();
        b.copy_from_slice(&beta[off[tr.index()]..off[tr.index()] + w]);
    }
    out
}

/// The β-dependent part of Q (transition sum and `-(1/2) log det S⁻¹`) and its
/// gradient in concatenated β order. The determinant derivative follows
/// Jacobi's formula, `-(1/2) Σ_r S_rr ∂h_r/∂β`, with `S` the constrained inverse.
pub fn beta_objective(
    data: &RegimeData,
    filter: &FilterState,
    params: &RegimeParams,
    u: &[f64],
    tau: f64,
    icar: &Icar,
) -> Result<(f64, Vec<f64>)> {
    check_shapes(data, filter, u)?;
    let off = beta_offsets(params);
    let nb: usize = TRANSITIONS.iter().map(|&t| params.beta(t).len()).sum();
    let n_regions = data.n_regions();
    let mut value = 0.0;
    let mut grad = vec![0.0; nb];
    let mut h = vec![0.0; n_regions];
    let mut dh = vec![vec![0.0; nb]; n_regions];
    if !data.shocks {
        let ld = -0.5 * icar.constrained_log_det(&spatial_precision(icar, tau, &h))?;
        return Ok((ld, grad));
    }
    for r in 0..n_regions {
        for k in 1..data.n_weeks() {
            let l = logits(data, params, r, k, u[r]);
            let p = transition_from_logits(l);
            let m = row_sensitivity(l, &p);
            let xi = &filter.regions[r].joint[k];
            let w = departing(xi);
            for i in 0..N_STATES {
                for j in 0..N_STATES {
                    if xi[i][j] > 0.0 {
                        value += xi[i][j] * p[i][j].ln();
                    }
                }
                h[r] += w[i] * m[i] * (1.0 - m[i]);
            }
            for tr in TRANSITIONS {
                if clamped(l[tr.index()]) {
                    continue;
                }
                let (i, j) = (tr.from(), tr.to());
                let score = xi[i][j] - w[i] * p[i][j];
                let dm = w[i] * (1.0 - 2.0 * m[i]) * p[i][j] * (1.0 - m[i]);
                let z = data.trans_z[tr.index()].row(r, k);
                let o = off[tr.index()];
                for (c, zc) in z.iter().enumerate() {
                    grad[o + c] += score * zc;
                    dh[r][o + c] += dm * zc;
                }
            }
        }
    }
    let s_inv = spatial_precision(icar, tau, &h);
    value -= 0.5 * icar.constrained_log_det(&s_inv)?;
    let s = icar.constrained_inverse(&s_inv)?;
    for r in 0..n_regions {
        for (g, d) in grad.iter_mut().zip(&dh[r]) {
            *g -= 0.5 * s[(r, r)] * d;
        }
    }
    Ok((value, grad))
}

/// Expected log joint density of the transitions and `u` (without the
/// determinant term), its gradient in `u` and the curvature `h`.
pub fn spatial_objective(
    data: &RegimeData,
    filter: &FilterState,
    params: &RegimeParams,
    u: &[f64],
    tau: f64,
    icar: &Icar,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n_regions = data.n_regions();
    let mut value = 0.0;
    let mut grad = vec![0.0; n_regions];
    let mut h = vec![0.0; n_regions];
    for r in 0..n_regions {
        if !data.shocks {
            break;
        }
        for k in 1..data.n_weeks() {
            let l = logits(data, params, r, k, u[r]);
            let p = transition_from_logits(l);
            let m = row_sensitivity(l, &p);
            let xi = &filter.regions[r].joint[k];
            let w = departing(xi);
            for i in 0..N_STATES {
                for j in 0..N_STATES {
                    if xi[i][j] > 0.0 {
                        value += xi[i][j] * p[i][j].ln();
                    }
                }
                grad[r] -= w[i] * m[i];
                h[r] += w[i] * m[i] * (1.0 - m[i]);
            }
            for tr in TRANSITIONS {
                if !clamped(l[tr.index()]) {
                    grad[r] += xi[tr.from()][tr.to()];
                }
            }
        }
    }
    let lu = icar.laplacian() * nalgebra::DVector::from_column_slice(u);
    value -= 0.5 * tau * icar.quadratic(u);
    for r in 0..n_regions {
        grad[r] -= tau * lu[r];
    }
    (value, grad, h)
}

/// Full gradient of Q in θ (layout order), at fixed filter weights.
pub fn q_gradient(
    data: &RegimeData,
    filter: &FilterState,
    params: &RegimeParams,
    u: &[f64],
    tau: f64,
    icar: &Icar,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(params.layout().q());
    for s in 1..=2 {
        for g in alpha_gradient(data, filter, params, s) {
            out.extend(g);
        }
    }
    let (_, gb) = beta_objective(data, filter, params, u, tau, icar)?;
    out.extend(gb);
    Ok(out)
}

