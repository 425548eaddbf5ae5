use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::poisson_draw;

/// Number of seasonal block effects.
pub const N_BLOCKS: usize = 13;

/// Seasonal block of ISO week `w`: four-week blocks, week 53 folded into
/// block 13.
pub fn q_of_week(w: u32) -> Result<usize> {
    if !(1..=53).contains(&w) {
        return Err(Error::validation(format!("ISO week {w} is outside 1..53")));
    }
    Ok(if w % 4 == 0 { (w / 4) as usize } else { ((w / 4 + 1) as usize).min(N_BLOCKS) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirsParams {
    pub phi: [f64; N_BLOCKS],
    /// Re-susceptibility rate.
    pub psi: f64,
    /// Transmission exponent.
    pub kappa: f64,
    /// Upper bound of the multiplicative noise `ε ~ U[0, ζ]`.
    pub zeta: f64,
}

impl SirsParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.psi) || !(self.kappa > 0.0) || !(self.zeta >= 0.0) {
            return Err(Error::validation(format!(
                "SIRS parameters out of range: ψ = {}, κ = {}, ζ = {}",
                self.psi, self.kappa, self.zeta
            )));
        }
        if self.phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("seasonal effects must be finite"));
        }
        Ok(())
    }

    /// `r_t = φ_{q(w)}`.
    pub fn rate(&self, w: u32) -> Result<f64> {
        Ok(self.phi[q_of_week(w)? - 1])
    }
}

/// Compartments entering a week: susceptibles, non-susceptibles and the two
/// previous weekly incidences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirsState {
    pub s: f64,
    pub r: f64,
    pub i_prev: f64,
    pub i_prev2: f64,
}

impl SirsState {
    /// `S = N − R` with `R` the sum of `recent` incidences.
    pub fn from_recent(n: f64, recent: &[f64]) -> Result<Self> {
        if recent.len() < 2 {
            return Err(Error::validation("at least two recent incidences are needed to start the recursion"));
        }
        let r: f64 = recent.iter().sum();
        let k = recent.len();
        Ok(SirsState { s: (n - r).max(0.0), r, i_prev: recent[k - 1], i_prev2: recent[k - 2] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirsStep {
    pub lambda: f64,
    pub i: f64,
    pub s: f64,
    pub r: f64,
    /// `S` went negative and was set to zero.
    pub clipped: bool,
}

impl SirsStep {
    /// State entering the following week.
    pub fn next_state(&self, prev: &SirsState) -> SirsState {
        SirsState { s: self.s, r: self.r, i_prev: self.i, i_prev2: prev.i_prev }
    }
}

/// `λ = S/N · (I₋₁ + I₋₂)^κ · exp(r + ε)`.
pub fn sirs_lambda(state: &SirsState, n: f64, kappa: f64, r_t: f64, eps: f64) -> f64 {
    let pressure = state.i_prev + state.i_prev2;
    if pressure <= 0.0 {
        return 0.0;
    }
    state.s * pressure.powf(kappa) * (r_t + eps).exp() / n
}

/// One week of the recursion with `I = λ`. A clip of `S` at zero is flagged
/// in the result; callers count and report them.
pub fn sirs_step(state: &SirsState, n: f64, psi: f64, kappa: f64, r_t: f64, eps: f64) -> Result<SirsStep> {
    if state.s < 0.0 || state.r < 0.0 || state.i_prev < 0.0 || state.i_prev2 < 0.0 {
        return Err(Error::validation(format!("negative SIRS compartments: {state:?}")));
    }
    if !(n > 0.0) {
        return Err(Error::validation("population size N must be positive"));
    }
    let lambda = sirs_lambda(state, n, kappa, r_t, eps);
    let raw = state.s - lambda + psi * state.r;
    let clipped = raw < 0.0;
    if clipped {
        log::debug!("SIRS susceptibles went negative ({raw:.3}); clipped at zero");
    }
    Ok(SirsStep {
        lambda,
        i: lambda,
        s: raw.max(0.0),
        r: (1.0 - psi) * state.r + state.i_prev,
        clipped,
    })
}

/// As [`sirs_step`] with `I ~ Poisson(λ)`.
pub fn sirs_step_sampled<R: Rng + ?Sized>(
    state: &SirsState,
    n: f64,
    psi: f64,
    kappa: f64,
    r_t: f64,
    eps: f64,
    rng: &mut R,
) -> Result<SirsStep> {
    let mut step = sirs_step(state, n, psi, kappa, r_t, eps)?;
    step.i = f64::from(poisson_draw(step.lambda, rng));
    Ok(step)
}

/// Simulates weekly incidences over `weeks`: the first four are `warmup`,
/// later ones are Poisson draws with `ε ~ U[0, ζ]`. Returns the series and
/// the number of susceptible clips.
pub fn simulate_sirs<R: Rng + ?Sized>(
    params: &SirsParams,
    n: f64,
    weeks: &crate::panel::WeekIndex,
    warmup: [f64; 4],
    rng: &mut R,
) -> Result<(Vec<f64>, usize)> {
    params.validate()?;
    if weeks.len() < warmup.len() {
        return Err(Error::validation("the simulation window is shorter than the warm-up"));
    }
    let mut out = warmup.to_vec();
    let mut st = SirsState::from_recent(n, &warmup)?;
    let mut clips = 0;
    for w in weeks.iter().skip(warmup.len()) {
        let eps = rng.random::<f64>() * params.zeta;
        let step = sirs_step_sampled(&st, n, params.psi, params.kappa, params.rate(w.week)?, eps, rng)?;
        clips += usize::from(step.clipped);
        out.push(step.i);
        st = step.next_state(&st);
    }
    Ok((out, clips))
}
