use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::regime::{log_emissions, logits, transition_from_logits, RegimeData, RegimeParams, N_STATES};
use crate::stats::log_sum_exp;

/// Filtered probabilities of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFilter {
    /// `P(S_t = j | data up to t)`.
    pub marginal: Vec<[f64; N_STATES]>,
    /// `P(S_{t-1} = i, S_t = j | data up to t)`; the first week holds zeros.
    pub joint: Vec<[[f64; N_STATES]; N_STATES]>,
    /// One-step predictive log densities.
    pub log_norm: Vec<f64>,
}

impl RegionFilter {
    pub fn loglik(&self) -> f64 {
        self.log_norm.iter().sum()
    }
}

/// Filtered probabilities of every region.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub regions: Vec<RegionFilter>,
}

impl FilterState {
    /// Incomplete-data log-likelihood given `u`.
    pub fn loglik(&self) -> f64 {
        self.regions.iter().map(RegionFilter::loglik).sum()
    }

    pub fn n_weeks(&self) -> usize {
        self.regions.first().map_or(0, |f| f.marginal.len())
    }
}

/// Forward recursion for region `r` in log space.
pub fn forward_filter(data: &RegimeData, params: &RegimeParams, r: usize, u: f64) -> Result<RegionFilter> {
    let t = data.n_weeks();
    let mut marginal = Vec::with_capacity(t);
    let mut joint = Vec::with_capacity(t);
    let mut log_norm = Vec::with_capacity(t);
    let log_rho = params.rho.map(f64::ln);
    let zero_mass = |k: usize| {
        Error::numerical(format!(
            "the model assigns zero probability to the deaths of region '{}' at week index {k}",
            data.regions[r]
        ))
    };
    for k in 0..t {
        let e = log_emissions(data, params, r, k)?;
        if k == 0 {
            let a: Vec<f64> = (0..N_STATES).map(|j| log_rho[j] + e[j]).collect();
            let c = log_sum_exp(&a);
            if !c.is_finite() {
                return Err(zero_mass(k));
            }
            let mut m = [0.0; N_STATES];
            for j in 0..N_STATES {
                m[j] = (a[j] - c).exp();
            }
            marginal.push(m);
            joint.push([[0.0; N_STATES]; N_STATES]);
            log_norm.push(c);
            continue;
        }
        let p = transition_from_logits(logits(data, params, r, k, u));
        let prev: &[f64; N_STATES] = &marginal[k - 1];
        let mut a = [f64::NEG_INFINITY; N_STATES * N_STATES];
        for i in 0..N_STATES {
            if prev[i] == 0.0 {
                continue;
            }
            for j in 0..N_STATES {
                if p[i][j] > 0.0 {
                    a[i * N_STATES + j] = prev[i].ln() + p[i][j].ln() + e[j];
                }
            }
        }
        let c = log_sum_exp(&a);
        if !c.is_finite() {
            return Err(zero_mass(k));
        }
        let mut jt = [[0.0; N_STATES]; N_STATES];
        let mut m = [0.0; N_STATES];
        for i in 0..N_STATES {
            for j in 0..N_STATES {
                let v = (a[i * N_STATES + j] - c).exp();
                jt[i][j] = v;
                m[j] += v;
            }
        }
        marginal.push(m);
        joint.push(jt);
        log_norm.push(c);
    }
    Ok(RegionFilter { marginal, joint, log_norm })
}

/// Filters every region in parallel.
pub fn filter_all(data: &RegimeData, params: &RegimeParams, u: &[f64]) -> Result<FilterState> {
    if u.len() != data.n_regions() {
        return Err(Error::validation("spatial effect length differs from the number of regions"));
    }
    let regions = (0..data.n_regions())
        .into_par_iter()
        .map(|r| forward_filter(data, params, r, u[r]))
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterState { regions })
}
