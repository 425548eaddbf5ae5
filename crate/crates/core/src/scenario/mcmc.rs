use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::panel::WeekIndex;
use crate::stats::quantiles;
use crate::uncertainty::replicate_rng;

use super::sirs::{q_of_week, sirs_step, sirs_step_sampled, SirsParams, SirsState, N_BLOCKS};

/// Weeks used to initialize the compartments before the first modelled week.
pub const WARMUP_WEEKS: usize = 4;
/// Shortest series accepted: two seasons.
pub const MIN_WEEKS: usize = 104;
/// Floor on the Poisson mean inside the likelihood.
const LAMBDA_FLOOR: f64 = 1e-8;
const TARGET_ACCEPT: f64 = 0.44;

/// Uniform prior ranges; seasonal effects are standard normal a priori.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirsPriors {
    pub psi: (f64, f64),
    pub kappa: (f64, f64),
    pub zeta: (f64, f64),
}

impl Default for SirsPriors {
    fn default() -> Self {
        SirsPriors { psi: (0.0, 1.0), kappa: (0.5, 1.5), zeta: (0.0, 1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcOptions {
    pub iterations: usize,
    pub burn_in: usize,
    /// Retained draws after thinning; `None` keeps every post burn-in sweep.
    pub samples: Option<usize>,
    pub seed: u64,
    pub priors: SirsPriors,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions { iterations: 20_000, burn_in: 10_000, samples: Some(1000), seed: 0, priors: SirsPriors::default() }
    }
}

/// A retained posterior draw and the compartments entering the first week
/// after the observed series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirsSample {
    pub params: SirsParams,
    pub end: SirsState,
    pub log_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirsPosterior {
    pub region: String,
    /// Population unit the counts refer to.
    pub n: f64,
    pub weeks: WeekIndex,
    pub samples: Vec<SirsSample>,
    /// Post burn-in acceptance rates of the block effects, ψ, κ, ζ and the
    /// mean over the weekly noise terms.
    pub acceptance: Vec<(String, f64)>,
    /// Final proposal scales per component, in sampler order.
    pub proposal_scales: Vec<f64>,
}

impl SirsPosterior {
    /// Posterior draws of `(φ₁..φ₁₃, ψ, κ, ζ)` per sample.
    pub fn parameter_draws(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| s.params.phi.iter().copied().chain([s.params.psi, s.params.kappa, s.params.zeta]).collect())
            .collect()
    }
}

fn parameter_names() -> Vec<String> {
    (1..=N_BLOCKS).map(|j| format!("phi{j}")).chain(["psi".into(), "kappa".into(), "zeta".into()]).collect()
}

/// Observed incidences with everything that does not depend on parameters.
struct Model {
    obs: Vec<f64>,
    log_fact: Vec<f64>,
    /// `ln(I_{t-1} + I_{t-2})`, `-∞` when both are zero.
    log_pressure: Vec<f64>,
    block: Vec<usize>,
    n: f64,
    r0: f64,
}

impl Model {
    fn new(obs: &[f64], weeks: &WeekIndex, n: f64) -> Result<Self> {
        let t = obs.len();
        let block = weeks.iter().map(|w| q_of_week(w.week).map(|q| q - 1)).collect::<Result<Vec<_>>>()?;
        let mut log_pressure = vec![f64::NEG_INFINITY; t];
        for k in 2..t {
            let p = obs[k - 1] + obs[k - 2];
            if p > 0.0 {
                log_pressure[k] = p.ln();
            }
        }
        Ok(Model {
            log_fact: obs.iter().map(|&v| ln_factorial(v as u64)).collect(),
            log_pressure,
            block,
            n,
            r0: obs[..WARMUP_WEEKS].iter().sum(),
            obs: obs.to_vec(),
        })
    }

    fn len(&self) -> usize {
        self.obs.len()
    }

    /// `R_t` for every week; independent of everything but ψ.
    fn r_path(&self, psi: f64) -> Vec<f64> {
        let mut r = vec![0.0; self.len()];
        r[WARMUP_WEEKS - 1] = self.r0;
        for k in WARMUP_WEEKS..self.len() {
            r[k] = (1.0 - psi) * r[k - 1] + self.obs[k - 1];
        }
        r
    }

    /// Recomputes `S_t` and the Poisson terms from week `from` on.
    fn fill(&self, p: &SirsParams, eps: &[f64], r: &[f64], s: &mut [f64], ll: &mut [f64], from: usize) {
        if from == WARMUP_WEEKS {
            s[WARMUP_WEEKS - 1] = (self.n - self.r0).max(0.0);
        }
        for k in from..self.len() {
            let prev = s[k - 1];
            let log_lambda = if prev > 0.0 && self.log_pressure[k].is_finite() {
                (prev / self.n).ln() + p.kappa * self.log_pressure[k] + p.phi[self.block[k]] + eps[k]
            } else {
                f64::NEG_INFINITY
            };
            let lambda = log_lambda.exp();
            s[k] = (prev - lambda + p.psi * r[k - 1]).max(0.0);
            let ll_lambda = lambda.max(LAMBDA_FLOOR);
            ll[k] = self.obs[k] * ll_lambda.ln() - ll_lambda - self.log_fact[k];
        }
    }
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

/// Log posterior prior part in the model's own parameters.
fn log_prior(p: &SirsParams, eps: &[f64], priors: &SirsPriors) -> f64 {
    if !in_range(p.psi, priors.psi) || !in_range(p.kappa, priors.kappa) || !in_range(p.zeta, priors.zeta) || p.zeta <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let modelled = &eps[WARMUP_WEEKS..];
    if modelled.iter().any(|&e| e < 0.0 || e > p.zeta) {
        return f64::NEG_INFINITY;
    }
    -0.5 * p.phi.iter().map(|v| v * v).sum::<f64>() - modelled.len() as f64 * p.zeta.ln()
}

/// Sampler coordinates. Block effects are centred on the typical log
/// infection pressure of their block and on the mean noise,
/// `φ̃_j = φ_j + κ·L̄_j + ζ/2`, and the noise is written `ε_t = ζ·v_t` with
/// `v_t ∈ [0, 1]`. Without this κ and ζ move along narrow ridges with the
/// block effects. The map has unit Jacobian up to `ζ^T`, which cancels the
/// uniform noise density, so the target is the prior on `(φ, ψ, κ, ζ)` times
/// the likelihood.
#[derive(Clone)]
struct Coords {
    phi_c: [f64; N_BLOCKS],
    psi: f64,
    kappa: f64,
    zeta: f64,
    v: Vec<f64>,
}

impl Coords {
    fn params(&self, centre: &[f64; N_BLOCKS]) -> SirsParams {
        let mut phi = [0.0; N_BLOCKS];
        for j in 0..N_BLOCKS {
            phi[j] = self.phi_c[j] - self.kappa * centre[j] - 0.5 * self.zeta;
        }
        SirsParams { phi, psi: self.psi, kappa: self.kappa, zeta: self.zeta }
    }

    fn eps(&self) -> Vec<f64> {
        self.v.iter().map(|v| self.zeta * v).collect()
    }

    fn log_prior(&self, p: &SirsParams, priors: &SirsPriors) -> f64 {
        if !in_range(p.psi, priors.psi) || !in_range(p.kappa, priors.kappa) || !in_range(p.zeta, priors.zeta) || p.zeta <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -0.5 * p.phi.iter().map(|v| v * v).sum::<f64>()
    }
}

struct Chain<'a> {
    model: &'a Model,
    priors: SirsPriors,
    centre: [f64; N_BLOCKS],
    x: Coords,
    p: SirsParams,
    eps: Vec<f64>,
    r: Vec<f64>,
    s: Vec<f64>,
    ll: Vec<f64>,
    prior: f64,
}

impl<'a> Chain<'a> {
    fn new(model: &'a Model, priors: SirsPriors, centre: [f64; N_BLOCKS], x: Coords) -> Self {
        let t = model.len();
        let p = x.params(&centre);
        let eps = x.eps();
        let r = model.r_path(p.psi);
        let (mut s, mut ll) = (vec![0.0; t], vec![0.0; t]);
        model.fill(&p, &eps, &r, &mut s, &mut ll, WARMUP_WEEKS);
        let prior = x.log_prior(&p, &priors);
        Chain { model, priors, centre, x, p, eps, r, s, ll, prior }
    }

    fn loglik(&self) -> f64 {
        self.ll[WARMUP_WEEKS..].iter().sum()
    }

    fn target(&self) -> f64 {
        self.prior + self.loglik()
    }

    /// Log posterior density in `(φ, ψ, κ, ζ, ε)`.
    fn log_density(&self) -> f64 {
        log_prior(&self.p, &self.eps, &self.priors) + self.loglik()
    }

    fn end_state(&self) -> SirsState {
        let t = self.model.len();
        SirsState { s: self.s[t - 1], r: self.r[t - 1], i_prev: self.model.obs[t - 1], i_prev2: self.model.obs[t - 2] }
    }

    /// Metropolis update of a global coordinate (`φ̃_j`, ψ, κ or ζ).
    fn update_global(&mut self, c: usize, step: f64, rng: &mut ChaCha8Rng) -> bool {
        let mut x = self.x.clone();
        let z: f64 = rng.sample(StandardNormal);
        match c {
            c if c < N_BLOCKS => x.phi_c[c] += step * z,
            13 => x.psi += step * z,
            14 => x.kappa += step * z,
            _ => x.zeta += step * z,
        }
        let p = x.params(&self.centre);
        let prior = x.log_prior(&p, &self.priors);
        if !prior.is_finite() {
            return false;
        }
        let eps = if c == 15 { x.eps() } else { self.eps.clone() };
        let r = if c == 13 { self.model.r_path(p.psi) } else { self.r.clone() };
        let (mut s, mut ll) = (self.s.clone(), self.ll.clone());
        self.model.fill(&p, &eps, &r, &mut s, &mut ll, WARMUP_WEEKS);
        let new: f64 = prior + ll[WARMUP_WEEKS..].iter().sum::<f64>();
        if rng.random::<f64>().ln() < new - self.target() {
            *self = Chain { model: self.model, priors: self.priors, centre: self.centre, x, p, eps, r, s, ll, prior };
            return true;
        }
        false
    }

    /// Metropolis update of `v_k`; only weeks from `k` on change.
    fn update_noise(&mut self, k: usize, step: f64, rng: &mut ChaCha8Rng, s_buf: &mut [f64], ll_buf: &mut [f64]) -> bool {
        let z: f64 = rng.sample(StandardNormal);
        let proposal = self.x.v[k] + step * z;
        if !(0.0..=1.0).contains(&proposal) {
            return false;
        }
        let old = self.eps[k];
        self.eps[k] = self.x.zeta * proposal;
        s_buf[k - 1] = self.s[k - 1];
        self.model.fill(&self.p, &self.eps, &self.r, s_buf, ll_buf, k);
        let delta: f64 = ll_buf[k..].iter().sum::<f64>() - self.ll[k..].iter().sum::<f64>();
        if rng.random::<f64>().ln() < delta {
            self.x.v[k] = proposal;
            self.s[k..].copy_from_slice(&s_buf[k..]);
            self.ll[k..].copy_from_slice(&ll_buf[k..]);
            true
        } else {
            self.eps[k] = old;
            false
        }
    }
}

/// Mean log infection pressure per block over the modelled weeks.
fn block_centres(model: &Model) -> [f64; N_BLOCKS] {
    let mut sums = [0.0; N_BLOCKS];
    let mut counts = [0usize; N_BLOCKS];
    for k in WARMUP_WEEKS..model.len() {
        if model.log_pressure[k].is_finite() {
            sums[model.block[k]] += model.log_pressure[k];
            counts[model.block[k]] += 1;
        }
    }
    let mut out = [0.0; N_BLOCKS];
    for j in 0..N_BLOCKS {
        if counts[j] > 0 {
            out[j] = sums[j] / counts[j] as f64;
        }
    }
    out
}

/// Crude starting values: κ at its prior midpoint and block effects from
/// the log ratio of incidence to infection pressure.
fn initial_params(model: &Model, priors: &SirsPriors) -> SirsParams {
    let kappa = 0.5 * (priors.kappa.0 + priors.kappa.1);
    let mut sums = [0.0; N_BLOCKS];
    let mut counts = [0usize; N_BLOCKS];
    for k in WARMUP_WEEKS..model.len() {
        let pressure = model.obs[k - 1] + model.obs[k - 2] + 0.5;
        let v = (model.obs[k] + 0.5).ln() - kappa * pressure.ln();
        sums[model.block[k]] += v;
        counts[model.block[k]] += 1;
    }
    let mut phi = [0.0; N_BLOCKS];
    for j in 0..N_BLOCKS {
        if counts[j] > 0 {
            phi[j] = (sums[j] / counts[j] as f64).clamp(-3.0, 3.0);
        }
    }
    let zeta = (0.1f64).clamp(priors.zeta.0.max(1e-6), priors.zeta.1);
    SirsParams { phi, psi: 0.5 * (priors.psi.0 + priors.psi.1), kappa, zeta }
}

/// Component-wise adaptive random-walk Metropolis for the SIRS posterior
/// given observed weekly incidence counts `obs` over `weeks`.
///
/// Proposal scales adapt towards a 0.44 acceptance rate during burn-in
/// (Robbins-Monro on the log scale) and are frozen afterwards.
pub fn sirs_mcmc(region: &str, obs: &[f64], weeks: &WeekIndex, n: f64, opts: &McmcOptions) -> Result<SirsPosterior> {
    if obs.len() != weeks.len() {
        return Err(Error::validation("incidence series and week index differ in length"));
    }
    if obs.len() < MIN_WEEKS {
        return Err(Error::validation(format!("the SIRS model needs at least {MIN_WEEKS} weeks, got {}", obs.len())));
    }
    if obs.iter().any(|&v| !(v >= 0.0) || v.fract() != 0.0) {
        return Err(Error::validation("incidences must be nonnegative whole counts"));
    }
    if !(n > 0.0) {
        return Err(Error::validation("population size N must be positive"));
    }
    if opts.iterations <= opts.burn_in {
        return Err(Error::validation("MCMC iterations must exceed the burn-in"));
    }
    let model = Model::new(obs, weeks, n)?;
    let t = model.len();
    let init = initial_params(&model, &opts.priors);
    let centre = block_centres(&model);
    let mut phi_c = [0.0; N_BLOCKS];
    for j in 0..N_BLOCKS {
        phi_c[j] = init.phi[j] + init.kappa * centre[j] + 0.5 * init.zeta;
    }
    let mut v = vec![0.0; t];
    for e in v.iter_mut().skip(WARMUP_WEEKS) {
        *e = 0.5;
    }
    let x = Coords { phi_c, psi: init.psi, kappa: init.kappa, zeta: init.zeta, v };
    let mut chain = Chain::new(&model, opts.priors, centre, x);
    if !chain.target().is_finite() {
        return Err(Error::numerical("SIRS posterior is not finite at the starting values"));
    }

    let n_global = N_BLOCKS + 3;
    let n_comp = n_global + t - WARMUP_WEEKS;
    let mut log_step: Vec<f64> = (0..n_comp)
        .map(|c| match c {
            c if c < N_BLOCKS => 0.1f64.ln(),
            13 => 0.05f64.ln(),
            14 => 0.02f64.ln(),
            15 => (0.5 * chain.p.zeta).ln(),
            _ => 0.3f64.ln(),
        })
        .collect();
    let mut accepted = vec![0usize; n_comp];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut s_buf, mut ll_buf) = (vec![0.0; t], vec![0.0; t]);

    let retained = opts.iterations - opts.burn_in;
    let want = opts.samples.unwrap_or(retained).clamp(1, retained);
    let stride = retained / want;
    let mut samples = Vec::with_capacity(want);

    for it in 0..opts.iterations {
        let burning = it < opts.burn_in;
        let gain = ((it + 1) as f64).powf(-0.6);
        for c in 0..n_comp {
            let step = log_step[c].exp();
            let ok = if c < n_global {
                chain.update_global(c, step, &mut rng)
            } else {
                chain.update_noise(WARMUP_WEEKS + c - n_global, step, &mut rng, &mut s_buf, &mut ll_buf)
            };
            if burning {
                log_step[c] += gain * (f64::from(u8::from(ok)) - TARGET_ACCEPT);
            } else if ok {
                accepted[c] += 1;
            }
        }
        if !burning {
            let j = it - opts.burn_in;
            if (j + 1) % stride == 0 && samples.len() < want {
                samples.push(SirsSample { params: chain.p.clone(), end: chain.end_state(), log_density: chain.log_density() });
            }
        }
    }

    let rate = |c: usize| accepted[c] as f64 / retained as f64;
    let mut acceptance: Vec<(String, f64)> = parameter_names().into_iter().enumerate().map(|(c, n)| (n, rate(c))).collect();
    let eps_rate = (n_global..n_comp).map(rate).sum::<f64>() / (n_comp - n_global) as f64;
    acceptance.push(("eps".into(), eps_rate));
    log::info!("SIRS MCMC for {region}: mean acceptance {:.3}", acceptance.iter().map(|a| a.1).sum::<f64>() / acceptance.len() as f64);
    let off: Vec<String> = acceptance
        .iter()
        .filter(|(_, a)| !(0.05..=0.6).contains(a))
        .map(|(n, a)| format!("{n} {a:.3}"))
        .collect();
    if !off.is_empty() {
        let scales: Vec<String> = log_step[..n_global].iter().map(|l| format!("{:.3e}", l.exp())).collect();
        log::warn!(
            "SIRS MCMC for {region}: acceptance outside [0.05, 0.6] after adaptation ({}); proposal scales {}",
            off.join(", "),
            scales.join(", ")
        );
    }
    Ok(SirsPosterior {
        region: region.to_string(),
        n,
        weeks: weeks.clone(),
        samples,
        acceptance,
        proposal_scales: log_step.iter().map(|l| l.exp()).collect(),
    })
}

/// Split-chain potential scale reduction of one scalar across chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect();
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Point-wise quantile trajectories of simulated future incidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirsForecast {
    pub region: String,
    pub weeks: WeekIndex,
    pub levels: Vec<f64>,
    /// `trajectories[level][k]`.
    pub trajectories: Vec<Vec<f64>>,
    /// Susceptible clip events over all simulated trajectories.
    pub clip_events: usize,
    /// Mean change in `S + R` over the horizon; the recursion does not
    /// conserve the population.
    pub conservation_drift: f64,
}

/// Simulates one future trajectory per posterior sample and takes
/// point-wise quantiles at `levels`. `deterministic` uses `I = λ` and
/// `ε = 0`.
pub fn sirs_forecast(
    posterior: &SirsPosterior,
    horizon: usize,
    levels: &[f64],
    deterministic: bool,
    seed: u64,
) -> Result<SirsForecast> {
    if posterior.samples.is_empty() {
        return Err(Error::validation("the SIRS posterior has no samples"));
    }
    let weeks = posterior.weeks.continuation(horizon);
    let runs = posterior
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| -> Result<(Vec<f64>, usize, f64)> {
            let mut rng = replicate_rng(seed, i);
            let p = &sample.params;
            let mut st = sample.end;
            let start_total = st.s + st.r;
            let mut path = Vec::with_capacity(horizon);
            let mut clips = 0;
            for w in weeks.iter() {
                let rate = p.rate(w.week)?;
                let step = if deterministic {
                    sirs_step(&st, posterior.n, p.psi, p.kappa, rate, 0.0)?
                } else {
                    let eps = rng.random::<f64>() * p.zeta;
                    sirs_step_sampled(&st, posterior.n, p.psi, p.kappa, rate, eps, &mut rng)?
                };
                clips += usize::from(step.clipped);
                path.push(step.i);
                st = step.next_state(&st);
            }
            Ok((path, clips, st.s + st.r - start_total))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut trajectories = vec![vec![0.0; horizon]; levels.len()];
    for k in 0..horizon {
        let values: Vec<f64> = runs.iter().map(|r| r.0[k]).collect();
        for (l, q) in quantiles(&values, levels).into_iter().enumerate() {
            trajectories[l][k] = q;
        }
    }
    let clip_events = runs.iter().map(|r| r.1).sum();
    if clip_events > 0 {
        log::warn!("{}: susceptibles clipped at zero {clip_events} times while forecasting", posterior.region);
    }
    Ok(SirsForecast {
        region: posterior.region.clone(),
        weeks,
        levels: levels.to_vec(),
        trajectories,
        clip_events,
        conservation_drift: runs.iter().map(|r| r.2).sum::<f64>() / runs.len() as f64,
    })
}
