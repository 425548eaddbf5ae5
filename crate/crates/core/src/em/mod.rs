//! EM calibration of the regime-switching model with a Laplace approximation
//! over the spatial effect: forward filtering, the expected complete-data
//! log-likelihood, block M-steps, the spatial-mode update and profile
//! selection of the ICAR precision.

mod estep;
mod filter;
mod mstep;

pub use estep::{
    alpha_gradient, beta_objective, beta_offsets, beta_vector, curvature, q_gradient, q_value, spatial_hessian,
    spatial_objective, with_beta, QValue,
};
pub use filter::{filter_all, forward_filter, FilterState, RegionFilter};
pub use mstep::{m_step_alpha, m_step_beta, m_step_rho, update_spatial_mode, BetaStep};

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::regime::{Icar, RegimeData, RegimeParams, RegimeSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Default ICAR precision grid for the profile likelihood.
pub const DEFAULT_TAU_GRID: [f64; 7] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop once the objective changes by less than this amount.
    pub epsilon: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { epsilon: 1e-6, max_iter: 200 }
    }
}

/// One row of the EM trace. `q_value` is the expected complete-data
/// log-likelihood at the iterate under its own filtered probabilities;
/// `q_after_m` re-evaluates it at the M-step output `θ` with the weights and
/// spatial mode of the previous row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmIteration {
    pub iteration: usize,
    pub q_value: f64,
    pub q_after_m: Option<f64>,
    pub loglik: f64,
    pub params: RegimeParams,
    pub u_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub iterations: Vec<EmIteration>,
    pub converged: bool,
}

impl EmTrace {
    pub fn objective(&self) -> Vec<f64> {
        self.iterations.iter().map(|i| i.q_value).collect()
    }

    /// Number of M-steps taken.
    pub fn n_steps(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub params: RegimeParams,
    pub u: Vec<f64>,
    pub tau: f64,
    pub filter: FilterState,
    pub q: QValue,
    pub trace: EmTrace,
    /// Incomplete-data log-likelihood with the Laplace terms at `(θ*, u*)`.
    pub profile_loglik: f64,
}

/// Filter log-likelihood plus the ICAR density of `u`, the Laplace constant and
/// `-(1/2) log det S⁻¹`, all at `(θ, u)`.
pub fn profile_loglik(
    data: &RegimeData,
    filter: &FilterState,
    params: &RegimeParams,
    u: &[f64],
    tau: f64,
    icar: &Icar,
) -> Result<f64> {
    let q = q_value(data, filter, params, u, tau, icar)?;
    Ok(filter.loglik() + q.prior + q.log_det)
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs EM from `init` and `u_init` at fixed `tau`.
pub fn fit_em(
    data: &RegimeData,
    icar: &Icar,
    tau: f64,
    init: &RegimeParams,
    u_init: Option<&[f64]>,
    opts: EmOptions,
) -> Result<EmResult> {
    if !(tau > 0.0) {
        return Err(Error::validation(format!("ICAR precision {tau} must be positive")));
    }
    if icar.len() != data.n_regions() {
        return Err(Error::validation("the region graph and the data have different regions"));
    }
    let start = Instant::now();
    let mut params = init.clone();
    let mut u = u_init.map_or_else(|| vec![0.0; data.n_regions()], <[f64]>::to_vec);
    crate::regime::center(&mut u);
    let mut filter = filter_all(data, &params, &u)?;
    let mut q = q_value(data, &filter, &params, &u, tau, icar)?;
    let mut trace = EmTrace::default();
    trace.iterations.push(EmIteration {
        iteration: 0,
        q_value: q.total(),
        q_after_m: None,
        loglik: filter.loglik(),
        params: params.clone(),
        u_norm: norm(&u),
        seconds: start.elapsed().as_secs_f64(),
    });
    let mut drops = 0;
    for it in 1..=opts.max_iter {
        let mut next = params.clone();
        for s in 1..=2 {
            if let Some(alpha) = m_step_alpha(data, &filter, &params, s)? {
                *next.alpha_mut(s) = alpha;
            }
        }
        next = m_step_beta(data, &filter, &next, &u, tau, icar)?.params;
        next.rho = m_step_rho(&filter);
        let q_after_m = q_value(data, &filter, &next, &u, tau, icar)?.total();
        let u_next = update_spatial_mode(data, &filter, &next, tau, icar, &u)?;
        params = next;
        u = u_next;
        filter = filter_all(data, &params, &u)?;
        let q_next = q_value(data, &filter, &params, &u, tau, icar)?;
        let delta = q_next.total() - q.total();
        // each θ block maximizes Q at fixed weights, so only a failed M-step
        // can lose ground here; Q across refilters may legitimately dip
        let gain = q_after_m - q.total();
        q = q_next;
        trace.iterations.push(EmIteration {
            iteration: it,
            q_value: q.total(),
            q_after_m: Some(q_after_m),
            loglik: filter.loglik(),
            params: params.clone(),
            u_norm: norm(&u),
            seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("EM iteration {it}: Q = {:.6}, ΔQ = {delta:.3e}", q.total());
        if gain < -1e-6 {
            drops += 1;
            if drops >= 2 {
                let values: Vec<String> = trace.objective().iter().map(|v| format!("{v:.6}")).collect();
                return Err(Error::numerical(format!(
                    "EM oscillates: the M-step decreased the objective twice (trace: {})",
                    values.join(", ")
                )));
            }
        }
        if delta.abs() < opts.epsilon {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!("EM stopped after {} iterations without reaching ε = {}", opts.max_iter, opts.epsilon);
    }
    let profile = profile_loglik(data, &filter, &params, &u, tau, icar)?;
    Ok(EmResult { params, u, tau, filter, q, trace, profile_loglik: profile })
}

#[derive(Debug, Clone)]
pub struct ProfileResult {
    pub tau: f64,
    /// `(τ, profile log-likelihood)` per grid point, in grid order.
    pub curve: Vec<(f64, f64)>,
    pub fits: Vec<EmResult>,
}

impl ProfileResult {
    pub fn best(&self) -> &EmResult {
        self.fits.iter().find(|f| f.tau == self.tau).expect("selected τ has a fit")
    }
}

/// Fits EM at every grid value in parallel and keeps the τ with the largest
/// profile log-likelihood; ties go to the smaller τ.
pub fn profile_tau(
    data: &RegimeData,
    icar: &Icar,
    grid: &[f64],
    init: &RegimeParams,
    opts: EmOptions,
) -> Result<ProfileResult> {
    if grid.is_empty() {
        return Err(Error::validation("the τ grid is empty"));
    }
    let fits = grid
        .par_iter()
        .map(|&tau| fit_em(data, icar, tau, init, None, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let mut best = order[0];
    for &i in &order[1..] {
        if fits[i].profile_loglik > fits[best].profile_loglik {
            best = i;
        }
    }
    Ok(ProfileResult {
        tau: grid[best],
        curve: grid.iter().zip(&fits).map(|(&t, f)| (t, f.profile_loglik)).collect(),
        fits,
    })
}

/// The saved regime fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeFit {
    pub schema_version: u32,
    pub spec: RegimeSpec,
    pub spec_hash: String,
    pub regions: Vec<String>,
    pub age_groups: Vec<String>,
    pub groups: Vec<String>,
    pub tau: f64,
    pub params: RegimeParams,
    pub u: Vec<f64>,
    pub q_value: f64,
    pub loglik: f64,
    pub profile_loglik: f64,
    pub profile: Vec<(f64, f64)>,
    pub standardizer: Standardizer,
    pub trace: EmTrace,
}

impl RegimeFit {
    pub fn new(spec: &RegimeSpec, data: &RegimeData, fit: &EmResult, profile: Vec<(f64, f64)>, standardizer: Standardizer) -> Self {
        RegimeFit {
            schema_version: SCHEMA_VERSION,
            spec: spec.clone(),
            spec_hash: spec.hash(),
            regions: data.regions.clone(),
            age_groups: data.age_groups.clone(),
            groups: data.groups.clone(),
            tau: fit.tau,
            params: fit.params.clone(),
            u: fit.u.clone(),
            q_value: fit.q.total(),
            loglik: fit.filter.loglik(),
            profile_loglik: fit.profile_loglik,
            profile,
            standardizer,
            trace: fit.trace.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fit: RegimeFit = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if fit.schema_version != SCHEMA_VERSION {
            return Err(Error::format(path, format!("unsupported schema version {}", fit.schema_version)));
        }
        if fit.spec.hash() != fit.spec_hash {
            return Err(Error::format(path, "specification hash does not match the embedded specification"));
        }
        Ok(fit)
    }
}
