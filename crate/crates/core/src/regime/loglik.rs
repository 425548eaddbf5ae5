use crate::error::{Error, Result};

use super::kernel::{log_emissions, row_sensitivity};
use super::{is_forbidden, logits, spatial_precision, transition_from_logits, Icar, RegimeData, RegimeParams, N_STATES};

fn check_path(data: &RegimeData, states: &[usize]) -> Result<()> {
    let t = data.n_weeks();
    if states.len() != data.n_regions() * t {
        return Err(Error::validation(format!(
            "state path has {} entries, expected {} regions × {t} weeks",
            states.len(),
            data.n_regions()
        )));
    }
    for r in 0..data.n_regions() {
        for k in 0..t {
            let s = states[r * t + k];
            if s >= N_STATES {
                return Err(Error::validation(format!("state {s} is out of range")));
            }
            if k > 0 && is_forbidden(states[r * t + k - 1], s) {
                return Err(Error::validation(format!(
                    "state path of region '{}' moves {} → {s} at week index {k}, which the chain forbids",
                    data.regions[r],
                    states[r * t + k - 1]
                )));
            }
        }
    }
    Ok(())
}

/// Expected logit curvature per region for a fixed state path
/// (`states[r * T + k]`): `h_r = Σ_t m(1 - m)` at the departing state.
pub fn path_curvature(data: &RegimeData, params: &RegimeParams, states: &[usize], u: &[f64]) -> Result<Vec<f64>> {
    check_path(data, states)?;
    let t = data.n_weeks();
    Ok((0..data.n_regions())
        .map(|r| {
            (1..t)
                .map(|k| {
                    let l = logits(data, params, r, k, u[r]);
                    let p = transition_from_logits(l);
                    let m = row_sensitivity(l, &p)[states[r * t + k - 1]];
                    m * (1.0 - m)
                })
                .sum()
        })
        .collect())
}

/// Complete-data log-likelihood of a state path. With `laplace` set, adds the
/// ICAR log density of `u`, `((R-1)/2) log 2π` and `-(1/2) log det S⁻¹`, the
/// determinant taken on the sum-to-zero subspace.
pub fn complete_loglik(
    data: &RegimeData,
    params: &RegimeParams,
    states: &[usize],
    u: &[f64],
    tau: f64,
    icar: &Icar,
    laplace: bool,
) -> Result<f64> {
    check_path(data, states)?;
    if u.len() != data.n_regions() {
        return Err(Error::validation("spatial effect length differs from the number of regions"));
    }
    let t = data.n_weeks();
    let mut total = 0.0;
    for r in 0..data.n_regions() {
        for k in 0..t {
            let s = states[r * t + k];
            total += log_emissions(data, params, r, k)?[s];
            if k == 0 {
                total += params.rho[s].ln();
            } else {
                let p = transition_from_logits(logits(data, params, r, k, u[r]));
                total += p[states[r * t + k - 1]][s].ln();
            }
        }
    }
    if laplace {
        let h = path_curvature(data, params, states, u)?;
        total += icar.logdensity(u, tau) + icar.laplace_constant()
            - 0.5 * icar.constrained_log_det(&spatial_precision(icar, tau, &h))?;
    }
    Ok(total)
}
