use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{design_matrix, BaselineFit, N_COEF};
use crate::error::{Error, Result};
use crate::linalg::{psd_factor, sample_mvn};
use crate::panel::WeekIndex;
use crate::regime::{logits, state_mean, transition_from_logits, Icar, RegimeData, RegimeParams};
use crate::stats::quantiles;
use crate::uncertainty::{draw_state, poisson_draw, replicate_rng};

use super::PredictionBands;

/// Bootstrap sample count used when none is given.
pub const DEFAULT_SAMPLES: usize = 25_000;

/// Which sources of uncertainty the bootstrap propagates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Toggles {
    pub parameter: bool,
    pub spatial: bool,
    pub state: bool,
    pub poisson: bool,
}

impl Toggles {
    pub fn all() -> Self {
        Toggles { parameter: true, spatial: true, state: true, poisson: true }
    }

    pub fn none() -> Self {
        Toggles::default()
    }
}

impl FromStr for Toggles {
    type Err = Error;

    /// Comma-separated subset of `param,spatial,state,poisson`; `all` and
    /// `none` are accepted.
    fn from_str(s: &str) -> Result<Self> {
        let mut t = Toggles::none();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "param" | "parameter" => t.parameter = true,
                "spatial" => t.spatial = true,
                "state" => t.state = true,
                "poisson" => t.poisson = true,
                "all" => t = Toggles::all(),
                "none" => {}
                other => return Err(Error::validation(format!("unknown uncertainty source '{other}'"))),
            }
        }
        Ok(t)
    }
}

impl fmt::Display for Toggles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on: Vec<&str> = [
            (self.parameter, "param"),
            (self.spatial, "spatial"),
            (self.state, "state"),
            (self.poisson, "poisson"),
        ]
        .iter()
        .filter(|(b, _)| *b)
        .map(|(_, n)| *n)
        .collect();
        if on.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", on.join(","))
        }
    }
}

/// How the simulated chain starts, one state per region.
#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    /// State of the first simulated week (in-sample replay).
    Initial(Vec<usize>),
    /// State of the week just before the first simulated week (forecasting).
    After(Vec<usize>),
}

impl Start {
    pub fn states(&self) -> &[usize] {
        match self {
            Start::Initial(s) | Start::After(s) => s,
        }
    }
}

/// Baseline coefficients and their covariance, for redrawing `b̂`.
#[derive(Debug, Clone)]
pub struct BaselineDraws {
    design: DMatrix<f64>,
    /// `gamma[x][r * 6 + p]`.
    gamma: Vec<Vec<f64>>,
    factors: Vec<DMatrix<f64>>,
    /// Horizon exposures in the cell layout.
    exposures: Vec<f64>,
    n_ages: usize,
}

impl BaselineDraws {
    pub fn new(fit: &BaselineFit, sigma1: &[DMatrix<f64>], weeks: &WeekIndex, exposures: Vec<f64>) -> Result<Self> {
        if sigma1.len() != fit.n_ages() {
            return Err(Error::validation("one baseline covariance per age group is required"));
        }
        if exposures.len() != fit.n_regions() * fit.n_ages() * weeks.len() {
            return Err(Error::validation("baseline exposures do not match the horizon"));
        }
        Ok(BaselineDraws {
            design: design_matrix(weeks, fit.origin),
            gamma: fit.gamma.clone(),
            factors: sigma1.iter().map(psd_factor).collect(),
            exposures,
            n_ages: fit.n_ages(),
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        self.gamma
            .iter()
            .zip(&self.factors)
            .map(|(g, f)| sample_mvn(&DVector::from_column_slice(g), f, rng).as_slice().to_vec())
            .collect()
    }

    fn mean(&self, gamma: &[Vec<f64>], r: usize, x: usize, k: usize) -> f64 {
        let n_t = self.design.nrows();
        let g = &gamma[x][r * N_COEF..(r + 1) * N_COEF];
        let eta: f64 = (0..N_COEF).map(|p| self.design[(k, p)] * g[p]).sum();
        self.exposures[(r * self.n_ages + x) * n_t + k] * eta.exp()
    }
}

/// Fitted model pieces the bootstrap draws from.
#[derive(Debug, Clone)]
pub struct BootstrapSetup<'a> {
    /// Covariates over the simulated weeks with `b̂` at the fitted baseline.
    pub data: &'a RegimeData,
    pub params: &'a RegimeParams,
    /// `Σ₂`, required when parameter uncertainty is on.
    pub sigma2: Option<&'a DMatrix<f64>>,
    pub u: &'a [f64],
    pub tau: f64,
    pub icar: &'a Icar,
    /// Redraws `b̂` under parameter uncertainty; `None` keeps `b̂` fixed.
    pub baseline: Option<&'a BaselineDraws>,
    pub start: Start,
    /// Path followed when state uncertainty is off, `path[r * T + k]`.
    pub fixed_path: &'a [usize],
    /// Exposures of the simulated cells, for death rates.
    pub exposures: &'a [f64],
}

struct Draw {
    params: RegimeParams,
    u: Vec<f64>,
    gamma: Option<Vec<Vec<f64>>>,
}

fn path_rng(seed: u64, r: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((r as u64 + 1) << 40));
    rng.set_stream(sample as u64);
    rng
}

/// Simulates one region under one draw; values follow `x * T + k`.
fn simulate_region(setup: &BootstrapSetup, draw: &Draw, toggles: Toggles, r: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let data = setup.data;
    let (n_x, n_t) = (data.n_ages(), data.n_weeks());
    let mut out = vec![0.0; n_x * n_t];
    let mut prev = setup.start.states()[r];
    for k in 0..n_t {
        let s = if !toggles.state {
            setup.fixed_path[r * n_t + k]
        } else if k == 0 && matches!(setup.start, Start::Initial(_)) {
            prev
        } else {
            let p = transition_from_logits(logits(data, &draw.params, r, k, draw.u[r]));
            draw_state(&p[prev], rng)
        };
        prev = s;
        for x in 0..n_x {
            let b = match (&draw.gamma, setup.baseline) {
                (Some(g), Some(bd)) => bd.mean(g, r, x, k),
                _ => data.b_hat(r, x, k),
            };
            let mean = if s == 0 {
                b
            } else {
                state_mean(b, data.state_z[s - 1].row(r, k), &draw.params.alpha(s)[data.group_of_age[x]])?
            };
            out[x * n_t + k] = if toggles.poisson { f64::from(poisson_draw(mean, rng)) } else { mean };
        }
    }
    Ok(out)
}

/// Bootstrap prediction bands over the weeks of `setup.data`.
///
/// Sample `i` draws its parameters, baseline coefficients and spatial effect
/// from stream `i` of `seed`; each region then simulates its chain and
/// deaths from its own stream, so regions can be processed one at a time
/// with memory proportional to `samples × ages × weeks`.
pub fn bootstrap_predict(setup: &BootstrapSetup, samples: usize, toggles: Toggles, seed: u64) -> Result<PredictionBands> {
    let data = setup.data;
    let (n_r, n_x, n_t) = (data.n_regions(), data.n_ages(), data.n_weeks());
    if samples == 0 {
        return Err(Error::validation("the number of bootstrap samples must be at least 1"));
    }
    if setup.start.states().len() != n_r || setup.u.len() != n_r {
        return Err(Error::validation("start states and spatial effects need one entry per region"));
    }
    if setup.fixed_path.len() != n_r * n_t {
        return Err(Error::validation("the fixed state path does not match the simulated weeks"));
    }
    if setup.exposures.len() != n_r * n_x * n_t {
        return Err(Error::validation("exposures do not match the simulated cells"));
    }
    let factor2 = match (toggles.parameter, setup.sigma2) {
        (true, Some(s)) => {
            if s.nrows() != setup.params.theta().len() {
                return Err(Error::validation("Σ₂ does not match the parameter layout"));
            }
            Some(psd_factor(s))
        }
        (true, None) => return Err(Error::validation("parameter uncertainty requires the regime covariance Σ₂")),
        _ => None,
    };
    let theta = DVector::from_vec(setup.params.theta());
    let draws = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Draw> {
            let mut rng = replicate_rng(seed, i);
            let (params, gamma) = match &factor2 {
                Some(f) => {
                    let t = sample_mvn(&theta, f, &mut rng);
                    let gamma = setup.baseline.map(|b| b.draw(&mut rng));
                    (setup.params.with_theta(t.as_slice())?, gamma)
                }
                None => (setup.params.clone(), None),
            };
            let u = if toggles.spatial { setup.icar.sample(setup.tau, &mut rng) } else { setup.u.to_vec() };
            Ok(Draw { params, u, gamma })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = n_r * n_x * n_t;
    let (mut q025, mut q50, mut q975) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for r in 0..n_r {
        let paths = draws
            .par_iter()
            .enumerate()
            .map(|(i, d)| simulate_region(setup, d, toggles, r, &mut path_rng(seed, r, i)))
            .collect::<Result<Vec<_>>>()?;
        let cells: Vec<[f64; 3]> = (0..n_x * n_t)
            .into_par_iter()
            .map(|j| {
                let values: Vec<f64> = paths.iter().map(|p| p[j]).collect();
                let q = quantiles(&values, &[0.025, 0.5, 0.975]);
                [q[0], q[1], q[2]]
            })
            .collect();
        for (j, q) in cells.iter().enumerate() {
            let cell = data.cell(r, j / n_t, j % n_t);
            q025[cell] = q[0];
            q50[cell] = q[1];
            q975[cell] = q[2];
        }
    }
    Ok(PredictionBands {
        regions: data.regions.clone(),
        age_groups: data.age_groups.clone(),
        weeks: data.weeks.clone(),
        samples,
        seed,
        toggles,
        exposures: setup.exposures.to_vec(),
        q025,
        q50,
        q975,
    })
}
