//! Score vector, simulation from a fitted regime model, the simultaneous
//! perturbation estimate of the Fisher information, and coefficient
//! covariances for the baseline and regime parameters.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineFit;
use crate::em::{filter_all, q_gradient, FilterState};
use crate::error::{Error, Result};
use crate::linalg::{clip_psd, pseudo_inverse_sym, symmetrize};
use crate::regime::{logits, state_mean, transition_from_logits, Icar, RegimeData, RegimeParams, N_STATES};

pub const SCHEMA_VERSION: u32 = 1;

/// Default number of SPSA replicates.
pub const DEFAULT_REPLICATES: usize = 2000;

/// Gradient of the expected complete-data log-likelihood in θ (layout order)
/// under `filter`, including the determinant term in every β block.
pub fn score(
    data: &RegimeData,
    filter: &FilterState,
    params: &RegimeParams,
    u: &[f64],
    tau: f64,
    icar: &Icar,
) -> Result<Vec<f64>> {
    q_gradient(data, filter, params, u, tau, icar)
}

/// Draws `k` from a discrete distribution given by `p`.
pub(crate) fn draw_state<R: Rng + ?Sized>(p: &[f64; N_STATES], rng: &mut R) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        acc += pj;
        if x < acc {
            return j;
        }
    }
    // rounding left a sliver above the cumulative sum
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

pub(crate) fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u32).unwrap_or(0)
}

/// State path (`states[r * T + k]`) and deaths (data cell layout) drawn from
/// the model with covariates held fixed.
pub fn simulate_panel<R: Rng + ?Sized>(
    data: &RegimeData,
    params: &RegimeParams,
    u: &[f64],
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<usize>)> {
    let (n_r, n_x, n_t) = (data.n_regions(), data.n_ages(), data.n_weeks());
    let mut states = vec![0; n_r * n_t];
    let mut deaths = vec![0; n_r * n_x * n_t];
    for r in 0..n_r {
        for k in 0..n_t {
            let s = if k == 0 {
                draw_state(&params.rho, rng)
            } else {
                let p = transition_from_logits(logits(data, params, r, k, u[r]));
                draw_state(&p[states[r * n_t + k - 1]], rng)
            };
            states[r * n_t + k] = s;
            for x in 0..n_x {
                let mean = mean_in_state(data, params, r, x, k, s)?;
                deaths[data.cell(r, x, k)] = poisson_draw(mean, rng);
            }
        }
    }
    Ok((deaths, states))
}

/// Poisson mean of cell `(r, x, k)` in state `s`.
pub fn mean_in_state(data: &RegimeData, params: &RegimeParams, r: usize, x: usize, k: usize, s: usize) -> Result<f64> {
    let b = data.b_hat(r, x, k);
    if s == 0 {
        return Ok(b);
    }
    let g = data.group_of_age[x];
    state_mean(b, data.state_z[s - 1].row(r, k), &params.alpha(s)[g])
}

/// Monte Carlo Fisher information estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherEstimate {
    pub schema_version: u32,
    /// Row-major `q × q`.
    pub fim: Vec<Vec<f64>>,
    pub replicates: usize,
    /// Perturbation size per coordinate.
    pub scale: Vec<f64>,
    pub seed: u64,
    pub labels: Vec<String>,
    /// Ratio of the largest to the smallest absolute eigenvalue.
    pub condition: f64,
}

impl FisherEstimate {
    pub fn matrix(&self) -> DMatrix<f64> {
        let q = self.fim.len();
        DMatrix::from_fn(q, q, |i, j| self.fim[i][j])
    }

    /// Standard errors from the (pseudo-)inverse.
    pub fn standard_errors(&self) -> Vec<f64> {
        regime_covariance(self).diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fim: FisherEstimate = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if fim.schema_version != SCHEMA_VERSION {
            return Err(Error::format(path, format!("unsupported schema version {}", fim.schema_version)));
        }
        Ok(fim)
    }
}

/// Default perturbation sizes `0.05 · max(|θ_j|, 0.1)`, or a global override.
pub fn perturbation_scale(theta: &[f64], global: Option<f64>) -> Vec<f64> {
    theta.iter().map(|t| global.unwrap_or(0.05 * t.abs().max(0.1))).collect()
}

/// Rademacher perturbation with entries `±c_j`.
pub fn rademacher<R: Rng + ?Sized>(scale: &[f64], rng: &mut R) -> Vec<f64> {
    scale.iter().map(|&c| if rng.random::<bool>() { c } else { -c }).collect()
}

#[derive(Debug, Clone)]
pub struct SpsaOptions {
    pub replicates: usize,
    /// Global perturbation size; `None` uses the relative default.
    pub scale: Option<f64>,
    pub seed: u64,
}

impl Default for SpsaOptions {
    fn default() -> Self {
        SpsaOptions { replicates: DEFAULT_REPLICATES, scale: None, seed: 0 }
    }
}

/// One replicate's Hessian estimate on a synthetic dataset.
fn spsa_replicate(
    data: &RegimeData,
    params: &RegimeParams,
    u: &[f64],
    tau: f64,
    icar: &Icar,
    scale: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let (deaths, _) = simulate_panel(data, params, u, rng)?;
    let synth = data.with_deaths(&deaths)?;
    let delta = rademacher(scale, rng);
    let theta = params.theta();
    let plus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
    let minus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - d).collect();
    let g = |th: &[f64]| -> Result<Vec<f64>> {
        let p = params.with_theta(th)?;
        let f = filter_all(&synth, &p, u)?;
        q_gradient(&synth, &f, &p, u, tau, icar)
    };
    let gp = g(&plus)?;
    let gm = g(&minus)?;
    let q = theta.len();
    let a = DMatrix::from_fn(q, q, |i, j| 0.5 * (gp[i] - gm[i]) / delta[j]);
    Ok(symmetrize(&a))
}

/// Replicate `k` of a run seeded with `seed` uses its own ChaCha stream.
pub fn replicate_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// SPSA Fisher information at `(θ*, u*)`, averaging replicate Hessian
/// estimates over synthetic datasets; filters are recomputed at `θ* ± Δ`.
pub fn spsa_fim(
    data: &RegimeData,
    params: &RegimeParams,
    u: &[f64],
    tau: f64,
    icar: &Icar,
    labels: Vec<String>,
    opts: &SpsaOptions,
) -> Result<FisherEstimate> {
    if opts.replicates == 0 {
        return Err(Error::validation("the number of SPSA replicates must be at least 1"));
    }
    if let Some(c) = opts.scale {
        if !(c > 0.0) {
            return Err(Error::validation(format!("perturbation scale {c} must be positive")));
        }
    }
    let theta = params.theta();
    let q = theta.len();
    let scale = perturbation_scale(&theta, opts.scale);
    let estimates = (0..opts.replicates)
        .into_par_iter()
        .map(|k| spsa_replicate(data, params, u, tau, icar, &scale, &mut replicate_rng(opts.seed, k)))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = DMatrix::zeros(q, q);
    for h in &estimates {
        sum += h;
    }
    let fim = symmetrize(&(-sum / opts.replicates as f64));
    let eig = SymmetricEigen::new(fim.clone());
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if q == 0 { 1.0 } else { max / min };
    if q > 0 && (eig.eigenvalues.iter().any(|&v| v <= 0.0) || !condition.is_finite() || condition > 1e12) {
        log::warn!("estimated Fisher information is singular or indefinite (condition {condition:.3e}); standard errors use a pseudo-inverse");
    }
    Ok(FisherEstimate {
        schema_version: SCHEMA_VERSION,
        fim: (0..q).map(|i| (0..q).map(|j| fim[(i, j)]).collect()).collect(),
        replicates: opts.replicates,
        scale,
        seed: opts.seed,
        labels,
        condition,
    })
}

/// `Σ₂`: inverse of the Fisher information (pseudo-inverse when singular),
/// projected onto the PSD cone.
pub fn regime_covariance(fim: &FisherEstimate) -> DMatrix<f64> {
    let m = fim.matrix();
    let inv = match m.clone().cholesky() {
        Some(c) => c.inverse(),
        None => pseudo_inverse_sym(&m, 1e-12),
    };
    clip_psd(&inv)
}

/// `Σ₁` per age group: inverse penalized baseline information, PSD-clipped.
pub fn baseline_covariances(fit: &BaselineFit) -> Vec<DMatrix<f64>> {
    (0..fit.n_ages())
        .map(|x| {
            let m = fit.fisher_matrix(x);
            let inv = match m.clone().cholesky() {
                Some(c) => c.inverse(),
                None => pseudo_inverse_sym(&m, 1e-12),
            };
            clip_psd(&inv)
        })
        .collect()
}

/// `(Σ₁ per age group, Σ₂)`.
pub fn coefficient_covariances(baseline: &BaselineFit, fim: &FisherEstimate) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    (baseline_covariances(baseline), regime_covariance(fim))
}
