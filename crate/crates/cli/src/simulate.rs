//! Synthetic project generator: input files drawn from a planted model plus
//! a ready-to-run configuration and the true parameters.

use std::path::{Path, PathBuf};

use mortality_regime::error::{Error, Result};
use mortality_regime::features::io::{
    read_daily_temperature, read_weekly_entries, write_regional_temperature, write_weekly_entries,
};
use mortality_regime::features::{build_features, DailyRegionalSeries, FeatureConfig, WeeklyEntries};
use mortality_regime::panel::io::{write_adjacency_csv, write_population_csv};
use mortality_regime::panel::{
    build_exposures, write_deaths_csv, CivilDate, IsoWeek, MortalityPanel, PopulationTable, RegionGraph, WeekIndex,
};
use mortality_regime::regime::{fit_standardizer, Icar, RegimeData, RegimeParams};
use mortality_regime::scenario::{simulate_sirs, SirsParams};
use mortality_regime::synthetic::{default_age_groups, planted_params, planted_spec};
use mortality_regime::uncertainty::simulate_panel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::stages::{ADMISSIONS_COLUMN, ADMISSIONS_SCALE, ILI_COLUMN, ILI_SCALE, PATHWAYS};

/// Weeks of covariate history written before the calibration window.
const HISTORY: usize = 8;

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub out: PathBuf,
    pub regions: usize,
    pub ages: usize,
    pub weeks: usize,
    pub horizon: usize,
    pub start: IsoWeek,
    pub tau: f64,
    pub seed: u64,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            out: PathBuf::from("synthetic"),
            regions: 3,
            ages: 2,
            weeks: 156,
            horizon: 26,
            start: IsoWeek { year: 2016, week: 1 },
            tau: 10.0,
            seed: 1,
        }
    }
}

#[derive(Serialize)]
struct Truth<'a> {
    params: &'a RegimeParams,
    u: &'a [f64],
    tau: f64,
    states: &'a [usize],
    sirs: &'a SirsParams,
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Daily temperatures: a seasonal cycle, a regional offset and AR(1) noise.
fn temperatures<R: Rng>(regions: &[String], start: CivilDate, n_days: usize, warming: f64, rng: &mut R) -> Result<DailyRegionalSeries> {
    let mut values = Vec::with_capacity(regions.len() * n_days);
    for r in 0..regions.len() {
        let mut e = 0.0;
        for d in 0..n_days {
            let doy = f64::from(start.add_days(d as i64).day_of_year());
            e = 0.7 * e + 2.0 * gaussian(rng);
            let season = 12.0 - 8.0 * (2.0 * std::f64::consts::PI * (doy - 15.0) / 365.25).cos();
            values.push(season + 0.5 * r as f64 + warming + e);
        }
    }
    DailyRegionalSeries::new(regions.to_vec(), start, n_days, values)
}

pub fn planted_sirs() -> SirsParams {
    let mut phi = [0.0; 13];
    for (j, p) in phi.iter_mut().enumerate() {
        *p = -0.1 + 0.3 * (2.0 * std::f64::consts::PI * (j as f64 + 0.5) / 13.0).cos();
    }
    SirsParams { phi, psi: 0.2, kappa: 0.9, zeta: 0.01 }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes the project and returns the path of its configuration file.
pub fn simulate_project(opts: &SimulateOptions) -> Result<PathBuf> {
    if opts.regions < 2 || opts.ages == 0 || opts.ages > 6 || opts.weeks < 104 || opts.horizon == 0 {
        return Err(Error::validation(
            "simulate needs at least 2 regions, 1 to 6 age groups, 104 calibration weeks and a nonempty horizon",
        ));
    }
    let dir = &opts.out;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let regions: Vec<String> = (0..opts.regions).map(|r| format!("R{:02}", r + 1)).collect();
    let ages: Vec<String> = default_age_groups().into_iter().take(opts.ages).collect();
    let window = WeekIndex::from_start(opts.start, opts.weeks);
    let first = opts.start.monday().add_days(-7 * HISTORY as i64).iso_week();
    let observed = WeekIndex::from_start(first, HISTORY + opts.weeks);
    let horizon = window.continuation(opts.horizon);

    let graph = RegionGraph::path(opts.regions);
    let graph = RegionGraph::new(&regions, &graph.edges().iter().map(|&(i, j)| (regions[i].clone(), regions[j].clone())).collect::<Vec<_>>())?;
    write_adjacency_csv(&graph, &dir.join("adjacency.csv"))?;

    let temp = temperatures(&regions, first.monday(), observed.len() * 7, 0.0, &mut rng)?;
    write_regional_temperature(&temp, &dir.join("temperature.csv"), None)?;
    for (name, warming) in PATHWAYS.iter().zip([0.5, 1.0, 2.0]) {
        let t = temperatures(&regions, horizon.first().monday(), horizon.len() * 7, warming, &mut rng)?;
        let file = format!("temperature_{}.csv", name.to_lowercase().replace('.', ""));
        write_regional_temperature(&t, &dir.join(file), Some(name))?;
    }

    let sirs = planted_sirs();
    let mut ili = WeeklyEntries::new();
    for region in &regions {
        let warmup = [200.0, 220.0, 250.0, 240.0].map(|v| v * (0.1 * gaussian(&mut rng)).exp());
        let (series, _) = simulate_sirs(&sirs, 1e5, &observed, warmup, &mut rng)?;
        for (week, v) in observed.iter().zip(series) {
            ili.insert((region.clone(), week), v.round());
        }
    }
    write_weekly_entries(&ili, ILI_COLUMN, 1.0, &dir.join("influenza.csv"))?;

    let mut admissions = WeeklyEntries::new();
    let centre = 0.6 * opts.weeks as f64;
    for (r, region) in regions.iter().enumerate() {
        for (k, week) in window.iter().enumerate() {
            let z = (k as f64 - centre - r as f64) / 5.0;
            let v = 40.0 * (-0.5 * z * z).exp();
            admissions.insert((region.clone(), week), if v < 0.05 { 0.0 } else { (v * 100.0).round() / 100.0 });
        }
    }
    write_weekly_entries(&admissions, ADMISSIONS_COLUMN, 1.0, &dir.join("admissions.csv"))?;

    let share = [0.30, 0.25, 0.20, 0.13, 0.08, 0.04];
    let mut population = PopulationTable::new();
    for (r, region) in regions.iter().enumerate() {
        let size = 1.5e6 * (1.0 + 0.1 * r as f64);
        for (x, age) in ages.iter().enumerate() {
            for year in opts.start.year - 1..=horizon.last().year + 1 {
                let growth = 1.005f64.powi(year - opts.start.year);
                population.insert(region, age, year, (size * share[x] * growth).round());
            }
        }
    }
    write_population_csv(&population, &dir.join("population.csv"))?;

    let spec = planted_spec();
    spec.save(&dir.join("spec.toml"))?;
    let temp = read_daily_temperature(&dir.join("temperature.csv"), None)?;
    let ili_in = read_weekly_entries(&dir.join("influenza.csv"), ILI_COLUMN, ILI_SCALE)?;
    let ha_in = read_weekly_entries(&dir.join("admissions.csv"), ADMISSIONS_COLUMN, ADMISSIONS_SCALE)?;
    let config = FeatureConfig { extra_columns: spec.columns(), ..FeatureConfig::default() };
    let (frame, _) = build_features(&temp, &ili_in, Some(&ha_in), &window, &config)?;

    let exposures = build_exposures(&population, &regions, &ages, &window)?;
    let rate = [0.010, 0.016, 0.027, 0.048, 0.090, 0.200];
    let mut b_hat = vec![0.0; exposures.len()];
    for r in 0..regions.len() {
        for (x, m) in rate.iter().enumerate().take(ages.len()) {
            for (k, week) in window.iter().enumerate() {
                let c = (r * ages.len() + x) * window.len() + k;
                let season = 0.12 * (2.0 * std::f64::consts::PI * (f64::from(week.week) - 2.0) / 52.18).cos();
                let trend = -0.01 * k as f64 / 52.18;
                b_hat[c] = exposures[c] * m * (season + trend).exp();
            }
        }
    }
    let blank = MortalityPanel::new(regions.clone(), ages.clone(), window.clone(), vec![0; b_hat.len()], exposures)?;
    let standardizer = fit_standardizer(&spec, &frame)?;
    let data = RegimeData::build(&spec, &blank, &b_hat, &frame, &standardizer)?;
    let params = planted_params(&spec, data.n_groups());
    let u = Icar::new(&graph)?.sample(opts.tau, &mut rng);
    let (deaths, states) = simulate_panel(&data, &params, &u, &mut rng)?;
    write_deaths_csv(&blank.with_deaths(deaths)?, &dir.join("deaths.csv"))?;

    let truth = Truth { params: &params, u: &u, tau: opts.tau, states: &states, sirs: &sirs };
    let path = dir.join("truth.json");
    std::fs::write(&path, serde_json::to_string_pretty(&truth).expect("json")).map_err(io_err(&path))?;

    let config = project_toml(opts, &window);
    let path = dir.join("project.toml");
    std::fs::write(&path, config).map_err(io_err(&path))?;
    log::info!("synthetic project written to {}", dir.display());
    Ok(path)
}

fn project_toml(opts: &SimulateOptions, window: &WeekIndex) -> String {
    format!(
        r#"[project]
output = "output"
seed = {seed}

[panel]
deaths = "deaths.csv"
population = "population.csv"
adjacency = "adjacency.csv"
start = "{start}"
end = "{end}"

[features]
temperature = "temperature.csv"
influenza = "influenza.csv"
admissions = "admissions.csv"

[baseline]
lambda_grid = [1.0, 100.0, 10000.0]

[regime]
spec = "spec.toml"
tau_grid = [1.0, 10.0, 100.0]

[fim]
replicates = 40

[forecast]
samples = 400
horizon_weeks = {horizon}

[scenario]
rcp26 = "temperature_rcp26.csv"
rcp45 = "temperature_rcp45.csv"
rcp85 = "temperature_rcp85.csv"
iterations = 1500
burn_in = 750
samples = 200
"#,
        seed = opts.seed,
        start = window.first(),
        end = window.last(),
        horizon = opts.horizon,
    )
}
