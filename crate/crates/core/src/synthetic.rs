//! Planted synthetic panels: seasonal baselines, heat and influenza-like
//! covariates built through the feature pipeline, a known regime path and
//! Poisson deaths drawn from it.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::features::{derive_columns, FeatureFrame, Standardizer};
use crate::panel::{CivilDate, IsoWeek, RegionGraph, WeekIndex, WEEKS_PER_YEAR};
use crate::regime::{Icar, ParamLayout, RegimeData, RegimeParams, RegimeSpec};
use crate::uncertainty::simulate_panel;

pub fn default_age_groups() -> Vec<String> {
    ["65-69", "70-74", "75-79", "80-84", "85-89", "90+"].iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_regions: usize,
    pub n_weeks: usize,
    pub start: IsoWeek,
    pub age_groups: Vec<String>,
    /// Typical weekly baseline deaths per cell.
    pub level: f64,
    pub tau: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_regions: 4,
            n_weeks: 300,
            start: IsoWeek { year: 2013, week: 1 },
            age_groups: default_age_groups(),
            level: 30.0,
            tau: 10.0,
        }
    }
}

/// A planted model instance with its simulated outcome.
#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub data: RegimeData,
    pub graph: RegionGraph,
    pub icar: Icar,
    pub params: RegimeParams,
    pub u: Vec<f64>,
    pub tau: f64,
    pub states: Vec<usize>,
    /// Raw (unstandardized) feature frame over the panel weeks.
    pub frame: FeatureFrame,
    pub standardizer: Standardizer,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn season(w: u32, peak: f64) -> f64 {
    (2.0 * std::f64::consts::PI * (f64::from(w) - peak) / WEEKS_PER_YEAR).cos()
}

/// Epidemic waves: one Gaussian-shaped wave per year with random timing,
/// height and regional jitter.
fn waves<R: Rng + ?Sized>(weeks: &WeekIndex, n_regions: usize, height: f64, centre: (f64, f64), rng: &mut R) -> Vec<f64> {
    let n = weeks.len();
    let mut out = vec![0.0; n_regions * n];
    let years: Vec<i32> = (weeks.y(1) - 1..=weeks.y(n) + 1).collect();
    for &y in &years {
        let c = centre.0 + rng.random::<f64>() * (centre.1 - centre.0);
        let a = height * (0.5 * normal(rng)).exp();
        for r in 0..n_regions {
            let ar = a * (0.2 * normal(rng)).exp();
            let cr = c + normal(rng);
            for k in 0..n {
                let pos = f64::from(weeks.y(k + 1) - y) * WEEKS_PER_YEAR + f64::from(weeks.w(k + 1));
                out[r * n + k] += ar * (-(pos - cr).powi(2) / (2.0 * 9.0)).exp();
            }
        }
    }
    out
}

/// Raw base columns TA, HI, CI, IA and HA over `weeks`.
pub fn synthetic_base_frame<R: Rng + ?Sized>(regions: &[String], weeks: &WeekIndex, rng: &mut R) -> Result<FeatureFrame> {
    let (n_r, n) = (regions.len(), weeks.len());
    let mut common = vec![0.0; n];
    let mut prev = 0.0;
    for c in common.iter_mut() {
        prev = 0.6 * prev + 0.8 * normal(rng);
        *c = prev;
    }
    let mut ta = vec![0.0; n_r * n];
    for r in 0..n_r {
        let mut own = 0.0;
        for k in 0..n {
            own = 0.6 * own + 0.8 * normal(rng);
            ta[r * n + k] = 0.8 * common[k] + 0.6 * own;
        }
    }
    let mut hi = vec![0.0; n_r * n];
    let mut ci = vec![0.0; n_r * n];
    for r in 0..n_r {
        for k in 0..n {
            let s = season(weeks.w(k + 1), 29.0);
            let t = ta[r * n + k];
            hi[r * n + k] = (0.35 * (t + 2.5 * s - 2.8)).clamp(0.0, 1.0);
            ci[r * n + k] = (0.35 * (-t - 2.5 * s - 2.8)).clamp(0.0, 1.0);
        }
    }
    // influenza peaks around new year (weeks 52 + 2..10); HA waves anywhere
    let ia = waves(weeks, n_r, 200.0, (54.0, 62.0), rng);
    let ha = waves(weeks, n_r, 30.0, (10.0, 45.0), rng);
    let mut frame = FeatureFrame::new(regions.to_vec(), weeks.clone());
    frame.set_column("TA", ta)?;
    frame.set_column("HI", hi)?;
    frame.set_column("CI", ci)?;
    frame.set_column("IA", ia)?;
    frame.set_column("HA", ha)?;
    Ok(frame)
}

/// Seasonal baseline means `b̂[(r·X + x)·T + k]`.
pub fn synthetic_baseline<R: Rng + ?Sized>(n_regions: usize, n_ages: usize, weeks: &WeekIndex, level: f64, rng: &mut R) -> Vec<f64> {
    let age_factor = [0.5, 0.6, 0.8, 1.0, 1.1, 0.9];
    let n = weeks.len();
    let mut out = Vec::with_capacity(n_regions * n_ages * n);
    for _ in 0..n_regions {
        let rf = 0.7 + 0.6 * rng.random::<f64>();
        for x in 0..n_ages {
            let a = age_factor[x % age_factor.len()];
            for k in 0..n {
                out.push(level * rf * a * (1.0 + 0.15 * season(weeks.w(k + 1), 2.0)));
            }
        }
    }
    out
}

/// A compact specification (two covariates per state, one slope per
/// transition) that stays identifiable on small panels.
pub fn planted_spec() -> RegimeSpec {
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    RegimeSpec {
        shocks: true,
        state1: names(&["TA", "HI"]),
        state2: names(&["IA_avg01_hinge75", "HA_avg01_hinge75"]),
        trans01: names(&["HI"]),
        trans02: names(&["IA_avg01_hinge75"]),
        trans11: names(&["HI"]),
        trans22: names(&["IA_avg01_hinge75"]),
        age_sharing: crate::regime::default_age_sharing(),
    }
}

/// Known parameters for [`planted_spec`] and the default specification;
/// other specifications get the EM starting values.
pub fn planted_params(spec: &RegimeSpec, n_groups: usize) -> RegimeParams {
    let layout = ParamLayout::new(spec, n_groups);
    let mut p = RegimeParams::initial(&layout, spec.shocks);
    if spec == &planted_spec() {
        for g in 0..n_groups {
            let f = 1.0 + 0.2 * g as f64;
            p.alpha1[g] = vec![0.12 * f, 0.04 * f];
            p.alpha2[g] = vec![0.10 * f, 0.05 * f];
        }
        p.beta01 = vec![-5.0, 1.2];
        p.beta02 = vec![-5.0, 1.2];
        p.beta11 = vec![0.0, 1.0];
        p.beta22 = vec![0.0, 1.0];
        p.rho = [0.98, 0.01, 0.01];
        return p;
    }
    if spec != &RegimeSpec::default() {
        return p;
    }
    let a1 = [0.05, 0.02, 0.0, 0.08, 0.03, 0.01];
    let a2 = [0.15, 0.05, 0.05, 0.02, 0.10, 0.05];
    for g in 0..n_groups {
        let f = 1.0 + 0.2 * g as f64;
        p.alpha1[g] = a1.iter().map(|v| v * f).collect();
        p.alpha2[g] = a2.iter().map(|v| v * f).collect();
    }
    p.beta01 = vec![-5.0, 1.0];
    p.beta02 = vec![-5.0, 0.8, 0.5];
    p.beta11 = vec![0.5, 0.8, 0.3, 0.0];
    p.beta22 = vec![1.5, 0.4, 0.2, 0.2, 0.1];
    p.rho = [0.98, 0.01, 0.01];
    p
}

/// Builds covariates, baseline, spatial effect and a simulated outcome on a
/// path graph.
pub fn synthetic_panel<R: Rng + ?Sized>(
    cfg: &SyntheticConfig,
    spec: &RegimeSpec,
    params: Option<&RegimeParams>,
    rng: &mut R,
) -> Result<SyntheticPanel> {
    let regions: Vec<String> = (0..cfg.n_regions).map(|r| format!("R{:02}", r + 1)).collect();
    let graph = RegionGraph::path(cfg.n_regions);
    let icar = Icar::new(&graph)?;
    let weeks = WeekIndex::from_start(cfg.start, cfg.n_weeks);
    let history = WeekIndex::from_start(CivilDate::from_days(cfg.start.monday().days() - 7 * 8).iso_week(), cfg.n_weeks + 8);
    let base = synthetic_base_frame(&regions, &history, rng)?;
    let frame = derive_columns(&base, &weeks, &spec.columns(), None)?;
    let standardizer = Standardizer::fit(&frame, &spec.columns())?;
    let mut columns = BTreeMap::new();
    for name in spec.columns() {
        let col = frame.require(&name)?.iter().map(|&v| standardizer.apply(&name, v)).collect();
        columns.insert(name, col);
    }
    let b_hat = synthetic_baseline(cfg.n_regions, cfg.age_groups.len(), &weeks, cfg.level, rng);
    let placeholder = vec![0; b_hat.len()];
    let data = RegimeData::from_columns(spec, regions, cfg.age_groups.clone(), weeks, &placeholder, b_hat, &columns)?;
    let params = params.cloned().unwrap_or_else(|| planted_params(spec, data.n_groups()));
    let u = icar.sample(cfg.tau, rng);
    let (deaths, states) = simulate_panel(&data, &params, &u, rng)?;
    let data = data.with_deaths(&deaths)?;
    Ok(SyntheticPanel { data, graph, icar, params, u, tau: cfg.tau, states, frame, standardizer })
}
