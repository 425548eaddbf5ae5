//! Small statistical helpers shared across modules.

use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

/// Linear-interpolation quantile of pre-sorted data (Hyndman and Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let n = sorted.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of an unsorted sample. NaN values are skipped.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

/// Several type-7 quantiles from a single sort.
pub fn quantiles(values: &[f64], ps: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    ps.iter().map(|&p| quantile_sorted(&v, p)).collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with `n - 1` denominator.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// `log P(D = d)` for `D ~ Poisson(mu)`; `mu = 0` is handled as a point mass at 0.
#[inline]
pub fn poisson_log_pmf(d: u32, mu: f64) -> f64 {
    if mu == 0.0 {
        return if d == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    f64::from(d) * mu.ln() - mu - ln_factorial(u64::from(d))
}

/// Poisson log-density extended to real-valued counts through `lnΓ(x + 1)`.
pub fn poisson_log_density_real(x: f64, mu: f64) -> f64 {
    if mu <= 0.0 {
        return if x == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    x * mu.ln() - mu - ln_gamma(x + 1.0)
}

/// `log Σ exp(x_i)` computed stably.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
