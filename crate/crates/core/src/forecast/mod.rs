//! Best-estimate state paths and deaths, bootstrap prediction bands with
//! switchable uncertainty sources, coverage and relative excess deaths.

mod bands;
mod bootstrap;

pub use bands::{coverage_check, excess_deaths, ExcessDeaths, Metric, PredictionBands};
pub use bootstrap::{bootstrap_predict, BaselineDraws, BootstrapSetup, Start, Toggles, DEFAULT_SAMPLES};

use std::collections::BTreeMap;

use crate::em::FilterState;
use crate::error::{Error, Result};
use crate::features::{FeatureFrame, Standardizer};
use crate::panel::WeekIndex;
use crate::regime::{logits, transition_from_logits, RegimeData, RegimeParams, RegimeSpec, N_STATES};
use crate::uncertainty::mean_in_state;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = j;
        }
    }
    best
}

/// Most probable filtered state per region and week, `states[r * T + k]`.
pub fn best_estimate_states(filter: &FilterState) -> Vec<usize> {
    filter
        .regions
        .iter()
        .flat_map(|f| f.marginal.iter().map(|m| argmax(m)))
        .collect()
}

/// Expected deaths along a state path, in the data cell layout.
pub fn best_estimate_deaths(states: &[usize], data: &RegimeData, params: &RegimeParams) -> Result<Vec<f64>> {
    let (n_r, n_x, n_t) = (data.n_regions(), data.n_ages(), data.n_weeks());
    if states.len() != n_r * n_t {
        return Err(Error::validation(format!("state path has {} entries, expected {}", states.len(), n_r * n_t)));
    }
    let mut out = vec![0.0; n_r * n_x * n_t];
    for r in 0..n_r {
        for x in 0..n_x {
            for k in 0..n_t {
                out[data.cell(r, x, k)] = mean_in_state(data, params, r, x, k, states[r * n_t + k])?;
            }
        }
    }
    Ok(out)
}

/// Argmax of the predicted state marginals when the chain is propagated
/// from `start` without observations.
pub fn most_probable_path(data: &RegimeData, params: &RegimeParams, u: &[f64], start: &Start) -> Result<Vec<usize>> {
    let (n_r, n_t) = (data.n_regions(), data.n_weeks());
    let first = start.states();
    if first.len() != n_r {
        return Err(Error::validation("start states must give one state per region"));
    }
    let mut out = vec![0; n_r * n_t];
    for r in 0..n_r {
        let mut pi = [0.0; N_STATES];
        pi[first[r]] = 1.0;
        for k in 0..n_t {
            if k > 0 || matches!(start, Start::After(_)) {
                let p = transition_from_logits(logits(data, params, r, k, u[r]));
                let mut next = [0.0; N_STATES];
                for i in 0..N_STATES {
                    for j in 0..N_STATES {
                        next[j] += pi[i] * p[i][j];
                    }
                }
                pi = next;
            }
            out[r * n_t + k] = argmax(&pi);
        }
    }
    Ok(out)
}

/// Regime model inputs over a forecast horizon: scenario covariates on the
/// model scale and the baseline means `b_hat` (cell layout). Deaths are
/// zero placeholders.
pub fn horizon_data(
    spec: &RegimeSpec,
    age_groups: &[String],
    horizon: &WeekIndex,
    frame: &FeatureFrame,
    standardizer: &Standardizer,
    b_hat: Vec<f64>,
) -> Result<RegimeData> {
    let frame = if frame.weeks() == horizon {
        frame.clone()
    } else {
        let missing: Vec<String> = horizon.iter().filter(|w| frame.weeks().t_of(*w).is_none()).map(|w| w.to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::validation(format!("scenario covariates do not cover horizon weeks {}", missing.join(", "))));
        }
        frame.slice(horizon)?
    };
    let n_t = horizon.len();
    let mut columns = BTreeMap::new();
    let mut gaps = Vec::new();
    for name in spec.columns() {
        let raw = frame.require(&name)?;
        for (cell, v) in raw.iter().enumerate() {
            if v.is_nan() {
                gaps.push(format!("{name} {} {}", frame.regions()[cell / n_t], horizon.iso(cell % n_t + 1)));
            }
        }
        columns.insert(name.clone(), raw.iter().map(|&v| standardizer.apply(&name, v)).collect());
    }
    if !gaps.is_empty() {
        let shown: Vec<&str> = gaps.iter().take(20).map(String::as_str).collect();
        return Err(Error::validation(format!(
            "scenario covariates missing for {} cells: {}{}",
            gaps.len(),
            shown.join(", "),
            if gaps.len() > 20 { ", ..." } else { "" }
        )));
    }
    let placeholder = vec![0; b_hat.len()];
    RegimeData::from_columns(
        spec,
        frame.regions().to_vec(),
        age_groups.to_vec(),
        horizon.clone(),
        &placeholder,
        b_hat,
        &columns,
    )
}
