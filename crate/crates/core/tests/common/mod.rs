#![allow(dead_code)]

use mortality_regime::panel::{MortalityPanel, RegionGraph, WeekIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn poisson<R: Rng>(rng: &mut R, mu: f64) -> u32 {
    if mu <= 0.0 {
        return 0;
    }
    Poisson::new(mu).unwrap().sample(rng) as u32
}

/// Panel with Serfling-shaped means `E·exp(row·γ)`; `gamma[x][r*6+p]`.
pub fn serfling_panel(
    graph: &RegionGraph,
    n_ages: usize,
    weeks: &WeekIndex,
    gamma: &[Vec<f64>],
    exposure: f64,
    seed: u64,
) -> MortalityPanel {
    let mut rng = rng(seed);
    let design = mortality_regime::baseline::design_matrix(weeks, weeks.first());
    let (n_r, n_t) = (graph.len(), weeks.len());
    let mut deaths = Vec::new();
    let mut exposures = Vec::new();
    for r in 0..n_r {
        for x in 0..n_ages {
            let e = exposure * (1.0 + 0.1 * r as f64 + 0.05 * x as f64);
            for k in 0..n_t {
                let eta: f64 = (0..6).map(|p| design[(k, p)] * gamma[x][r * 6 + p]).sum();
                deaths.push(poisson(&mut rng, e * eta.exp()));
                exposures.push(e);
            }
        }
    }
    let ages = (0..n_ages).map(|x| format!("A{x}")).collect();
    MortalityPanel::new(graph.regions().to_vec(), ages, weeks.clone(), deaths, exposures).unwrap()
}

/// Typical coefficients: rate ≈ 0.004 per person-week with winter peaks.
pub fn typical_gamma(n_regions: usize, n_ages: usize, regional_spread: f64) -> Vec<Vec<f64>> {
    (0..n_ages)
        .map(|x| {
            (0..n_regions)
                .flat_map(|r| {
                    let s = regional_spread * ((r as f64 * 1.7).sin());
                    vec![-5.5 + 0.3 * x as f64 + s, -2e-4, 0.05, 0.15 + 0.5 * s, 0.02, 0.03]
                })
                .collect()
        })
        .collect()
}

use std::collections::BTreeMap;

use mortality_regime::panel::IsoWeek;
use mortality_regime::regime::{RegimeData, RegimeParams, RegimeSpec};
use rand_distr::StandardNormal;

/// Small specification over generic columns Z1..Z3; age groups share
/// coefficients pairwise.
pub fn toy_spec() -> RegimeSpec {
    let v = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let mut sharing = BTreeMap::new();
    for (a, g) in [("A0", "G0"), ("A1", "G0"), ("A2", "G1"), ("A3", "G1")] {
        sharing.insert(a.to_string(), g.to_string());
    }
    RegimeSpec {
        shocks: true,
        state1: v(&["Z1", "Z2"]),
        state2: v(&["Z3"]),
        trans01: v(&["Z1"]),
        trans02: v(&["Z3"]),
        trans11: v(&["Z2"]),
        trans22: Vec::new(),
        age_sharing: sharing,
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Random design with baselines around `level`; deaths are drawn around the
/// baseline.
pub fn toy_data(spec: &RegimeSpec, n_regions: usize, n_ages: usize, n_weeks: usize, level: f64, seed: u64) -> RegimeData {
    let mut rng = rng(seed);
    let regions: Vec<String> = (0..n_regions).map(|r| format!("R{r}")).collect();
    let ages: Vec<String> = (0..n_ages).map(|x| format!("A{x}")).collect();
    let weeks = WeekIndex::from_start(IsoWeek { year: 2020, week: 1 }, n_weeks);
    let mut columns = BTreeMap::new();
    for name in spec.columns() {
        columns.insert(name, (0..n_regions * n_weeks).map(|_| normal(&mut rng)).collect::<Vec<f64>>());
    }
    let n = n_regions * n_ages * n_weeks;
    let b_hat: Vec<f64> = (0..n).map(|_| level * (0.5 + rng.random::<f64>())).collect();
    let deaths: Vec<u32> = b_hat.iter().map(|&b| {
            let m = b * (0.3 * normal(&mut rng)).exp();
            poisson(&mut rng, m)
        }).collect();
    RegimeData::from_columns(spec, regions, ages, weeks, &deaths, b_hat, &columns).unwrap()
}

/// Random parameters of moderate size with all transitions live.
pub fn toy_params(data: &RegimeData, spec: &RegimeSpec, seed: u64) -> RegimeParams {
    let mut rng = rng(seed ^ 0x5eed);
    let layout = mortality_regime::regime::ParamLayout::new(spec, data.n_groups());
    let init = RegimeParams::initial(&layout, true);
    let theta: Vec<f64> = init
        .theta()
        .iter()
        .enumerate()
        .map(|(i, _)| if i < alpha_len(&init) { 0.3 * normal(&mut rng) } else { normal(&mut rng) })
        .collect();
    let mut p = init.with_theta(&theta).unwrap();
    let w: [f64; 3] = [1.0 + rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let s: f64 = w.iter().sum();
    p.rho = w.map(|v| v / s);
    p
}

fn alpha_len(p: &RegimeParams) -> usize {
    p.alpha1.iter().chain(&p.alpha2).map(Vec::len).sum()
}

pub fn random_u(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed ^ 0xface);
    let mut u: Vec<f64> = (0..n).map(|_| 0.5 * normal(&mut rng)).collect();
    mortality_regime::regime::center(&mut u);
    u
}
