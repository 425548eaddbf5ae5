use crate::error::{Error, Result};

use super::{RegimeData, RegimeParams, Transition, N_STATES, TRANSITIONS};

/// Transition logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]`.
pub const LOGIT_CLAMP: f64 = 30.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Poisson mean `b̂ · exp(zᵀα)` of a shock state; an empty `alpha` gives `b̂`.
pub fn state_mean(b_hat: f64, z: &[f64], alpha: &[f64]) -> Result<f64> {
    if !(b_hat > 0.0) {
        return Err(Error::validation(format!("baseline mean {b_hat} is not positive")));
    }
    let eta = dot(z, alpha);
    let mean = b_hat * eta.exp();
    if !eta.is_finite() || !mean.is_finite() {
        return Err(Error::numerical(format!(
            "state mean exponent zᵀα = {eta} is not finite (z = {z:?}, α = {alpha:?})"
        )));
    }
    Ok(mean)
}

/// Row-stochastic matrix from the four clamped logits `[l01, l02, l11, l22]`.
pub fn transition_from_logits(l: [f64; 4]) -> [[f64; 3]; 3] {
    let e = l.map(f64::exp);
    let d0 = 1.0 + e[0] + e[1];
    let d1 = 1.0 + e[2];
    let d2 = 1.0 + e[3];
    [
        [1.0 / d0, e[0] / d0, e[1] / d0],
        [1.0 / d1, e[2] / d1, 0.0],
        [1.0 / d2, 0.0, e[3] / d2],
    ]
}

/// Transition matrix for covariate rows `z` (intercept entry included) and
/// coefficients `beta` in the order 01, 02, 11, 22, with spatial effect `u`
/// added to every non-baseline logit.
pub fn transition_matrix(z: [&[f64]; 4], beta: [&[f64]; 4], u: f64) -> [[f64; 3]; 3] {
    let mut l = [0.0; 4];
    for i in 0..4 {
        l[i] = (dot(z[i], beta[i]) + u).clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    }
    transition_from_logits(l)
}

/// Clamped logits for region `r`, week index `k`; `-∞` when the chain has no shocks.
pub fn logits(data: &RegimeData, params: &RegimeParams, r: usize, k: usize, u: f64) -> [f64; 4] {
    if !data.shocks {
        return [f64::NEG_INFINITY; 4];
    }
    TRANSITIONS.map(|tr: Transition| {
        (dot(data.trans_z[tr.index()].row(r, k), params.beta(tr)) + u).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    })
}

/// `true` when the logit sits on the clamp, where its derivative is zero.
pub fn clamped(l: f64) -> bool {
    l.abs() >= LOGIT_CLAMP
}

/// Per row `i`, the `u`-derivative of `-log p^{i0}`: the probability mass on
/// unclamped non-baseline logits. Its curvature contribution is `m(1 - m)`.
pub fn row_sensitivity(l: [f64; 4], p: &[[f64; 3]; 3]) -> [f64; 3] {
    let c = l.map(|v| if clamped(v) { 0.0 } else { 1.0 });
    [p[0][1] * c[0] + p[0][2] * c[1], p[1][1] * c[2], p[2][2] * c[3]]
}

/// `log ∏_x P(d_{x} | S = j)` for every state at region `r`, week index `k`.
pub fn log_emissions(data: &RegimeData, params: &RegimeParams, r: usize, k: usize) -> Result<[f64; N_STATES]> {
    let mut out = [0.0; N_STATES];
    if !data.shocks {
        out[1] = f64::NEG_INFINITY;
        out[2] = f64::NEG_INFINITY;
    }
    let n_groups = data.n_groups();
    let mut eta = [vec![0.0; n_groups], vec![0.0; n_groups]];
    if data.shocks {
        for s in 1..=2 {
            let z = data.state_z[s - 1].row(r, k);
            for g in 0..n_groups {
                let e = dot(z, &params.alpha(s)[g]);
                if !e.is_finite() || e > 700.0 {
                    return Err(Error::numerical(format!(
                        "state-{s} exponent zᵀα = {e} overflows for region '{}' week {} (z = {z:?})",
                        data.regions[r],
                        data.weeks.iter().nth(k).map(|w| w.to_string()).unwrap_or_default()
                    )));
                }
                eta[s - 1][g] = e;
            }
        }
    }
    for x in 0..data.n_ages() {
        let d = data.deaths(r, x, k);
        let b = data.b_hat(r, x, k);
        let lf = data.log_factorial(r, x, k);
        let lb = b.ln();
        out[0] += d * lb - b - lf;
        if data.shocks {
            let g = data.group_of_age[x];
            for s in 1..=2 {
                let e = eta[s - 1][g];
                out[s] += d * (lb + e) - b * e.exp() - lf;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_mean_examples() {
        assert_eq!(state_mean(7.0, &[1.0, 2.0], &[0.0, 0.0]).unwrap(), 7.0);
        assert!((state_mean(10.0, &[1.0], &[2f64.ln()]).unwrap() - 20.0).abs() < 1e-12);
        let m = state_mean(7.3, &[0.5, -1.0], &[0.4, 0.1]).unwrap();
        assert!((m - 7.3 * 0.1f64.exp()).abs() < 1e-12);
        assert!((m - 8.0678).abs() < 1e-4);
        assert!(state_mean(1.0, &[1.0], &[1e6]).is_err());
        assert!(state_mean(0.0, &[], &[]).is_err());
    }

    #[test]
    fn zero_logits_and_hand_softmax() {
        let p = transition_from_logits([0.0; 4]);
        assert_eq!(p[0], [1.0 / 3.0; 3]);
        assert_eq!(p[1], [0.5, 0.5, 0.0]);
        assert_eq!(p[2], [0.5, 0.0, 0.5]);
        let p = transition_from_logits([2f64.ln(), 0.0, 0.0, 0.0]);
        assert!((p[0][0] - 0.25).abs() < 1e-15 && (p[0][1] - 0.5).abs() < 1e-15 && (p[0][2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn saturation_is_clamped() {
        let one = [1.0];
        let z: [&[f64]; 4] = [&one, &one, &one, &one];
        let p = transition_matrix(z, [&[0.0], &[0.0], &[1e6], &[0.0]], 0.0);
        assert!(p[1][1] > 1.0 - 1e-12 && p[1][0] < 1e-12);
        assert!(p[1][0] > 0.0);
    }
}
