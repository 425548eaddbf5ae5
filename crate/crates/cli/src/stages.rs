//! Pipeline stages. Each stage reads its inputs from raw files or upstream
//! artifacts and writes its own directory, so a stage can be rerun alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mortality_regime::baseline::{fit_baseline, predict_baseline, BaselineFit, LambdaGrid};
use mortality_regime::em::{filter_all, profile_tau, EmOptions, RegimeFit};
use mortality_regime::error::{Error, Result};
use mortality_regime::features::io::{
    read_daily_temperature, read_grid_population, read_pathway_name, read_weekly_entries, write_weekly_entries,
};
use mortality_regime::features::{
    build_features, DailyRegionalSeries, FeatureCalibration, FeatureConfig, FeatureFrame, WeeklyEntries,
    WeeklyRegionalSeries,
};
use mortality_regime::forecast::{
    argmax, best_estimate_deaths, best_estimate_states, bootstrap_predict, excess_deaths, horizon_data,
    most_probable_path, BaselineDraws, BootstrapSetup, PredictionBands, Start,
};
use mortality_regime::panel::{build_exposures, load_panel, read_population, MortalityPanel, RegionGraph};
use mortality_regime::regime::{fit_standardizer, Icar, ParamLayout, RegimeData, RegimeParams, RegimeSpec};
use mortality_regime::scenario::{
    assemble_scenarios, default_pairings, sirs_forecast, sirs_mcmc, McmcOptions, SirsPosterior, SEVERITIES,
};
use mortality_regime::uncertainty::{coefficient_covariances, spsa_fim, FisherEstimate, SpsaOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::charts::{emit_charts, read_lines, write_lines, LineRow};
use crate::config::ProjectConfig;
use crate::pipeline::{Runner, Stage, Status};

pub const ILI_COLUMN: &str = "ili_per_100k";
pub const ADMISSIONS_COLUMN: &str = "admissions_per_100k";
/// Influenza files are per 100,000; features use per 100.
pub const ILI_SCALE: f64 = 1e-3;
/// Admission files are per 100,000; features use per 1,000.
pub const ADMISSIONS_SCALE: f64 = 1e-2;
pub const PATHWAYS: [&str; 3] = ["RCP2.6", "RCP4.5", "RCP8.5"];

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))
}

fn csv_row<I, S>(w: &mut csv::Writer<std::fs::File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_spec(cfg: &ProjectConfig) -> Result<RegimeSpec> {
    let spec = match &cfg.regime.spec {
        Some(p) => RegimeSpec::load(p)?,
        None => RegimeSpec::default(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Paths of every artifact the stages exchange.
pub struct Artifacts {
    pub panel: PathBuf,
    pub graph: PathBuf,
    pub features: PathBuf,
    pub calibration: PathBuf,
    pub baseline: PathBuf,
    pub regime: PathBuf,
    pub fim: PathBuf,
    pub sirs_dir: PathBuf,
    pub scenarios_dir: PathBuf,
}

impl Artifacts {
    pub fn new(runner: &Runner) -> Self {
        Artifacts {
            panel: runner.dir(Stage::Ingest).join("panel.json"),
            graph: runner.dir(Stage::Ingest).join("graph.json"),
            features: runner.dir(Stage::Features).join("features.csv"),
            calibration: runner.dir(Stage::Features).join("calibration.json"),
            baseline: runner.dir(Stage::FitBaseline).join("baseline.json"),
            regime: runner.dir(Stage::FitRegime).join("regime.json"),
            fim: runner.dir(Stage::Fim).join("fim.json"),
            sirs_dir: runner.dir(Stage::ScenarioSirs),
            scenarios_dir: runner.dir(Stage::AssembleScenarios),
        }
    }

    fn severity_file(&self, severity: &str) -> PathBuf {
        self.sirs_dir.join(format!("influenza_{severity}.csv"))
    }

    fn scenario_files(&self) -> Vec<PathBuf> {
        default_pairings()
            .iter()
            .flat_map(|p| {
                [
                    self.scenarios_dir.join(format!("{}.csv", p.label)),
                    self.scenarios_dir.join(format!("{}.json", p.label)),
                ]
            })
            .collect()
    }
}

/// Runs every stage `target` depends on, then `target`.
pub fn run_until(runner: &mut Runner, target: Stage) -> Result<()> {
    for stage in Stage::plan(target) {
        run_stage(runner, stage)?;
    }
    Ok(())
}

fn run_stage(runner: &mut Runner, stage: Stage) -> Result<Status> {
    let cfg = runner.cfg;
    let a = Artifacts::new(runner);
    match stage {
        Stage::Ingest => {
            let inputs = vec![cfg.panel.deaths.clone(), cfg.panel.population.clone(), cfg.panel.adjacency.clone()];
            let settings = json!({ "start": cfg.panel.start, "end": cfg.panel.end, "mask": cfg.panel.mask_weeks });
            runner.run(stage, settings, &inputs, None, |dir| ingest(cfg, dir))
        }
        Stage::Features => {
            let spec = load_spec(cfg)?;
            let mut inputs = vec![cfg.features.temperature.clone(), cfg.features.influenza.clone()];
            inputs.extend(cfg.features.population_grid.clone());
            inputs.extend(cfg.features.admissions.clone());
            let settings = json!({
                "start": cfg.panel.start,
                "end": cfg.panel.end,
                "hi_q": cfg.features.hi_q,
                "lo_q": cfg.features.lo_q,
                "exclude_self": cfg.features.exclude_self,
                "extra_columns": spec.columns(),
            });
            runner.run(stage, settings, &inputs, None, |dir| features(cfg, &spec, dir))
        }
        Stage::FitBaseline => {
            let inputs = vec![a.panel.clone(), a.graph.clone()];
            let settings = json!({ "lambda_grid": cfg.baseline.lambda_grid });
            runner.run(stage, settings, &inputs, None, |dir| baseline(cfg, &a, dir))
        }
        Stage::FitRegime => {
            let spec = load_spec(cfg)?;
            let inputs = vec![a.panel.clone(), a.graph.clone(), a.features.clone(), a.baseline.clone()];
            let settings = json!({
                "spec": spec.to_toml_string(),
                "tau_grid": cfg.regime.tau_grid,
                "epsilon": cfg.regime.epsilon,
                "max_iter": cfg.regime.max_iter,
            });
            runner.run(stage, settings, &inputs, None, |dir| regime(cfg, &spec, &a, dir))
        }
        Stage::Fim => {
            let inputs = vec![a.panel.clone(), a.graph.clone(), a.features.clone(), a.baseline.clone(), a.regime.clone()];
            let settings = json!({ "replicates": cfg.fim.replicates, "scale": cfg.fim.scale });
            runner.run(stage, settings, &inputs, Some(cfg.fim_seed()), |dir| fim(cfg, &a, dir))
        }
        Stage::Forecast => {
            let inputs = vec![
                a.panel.clone(),
                a.graph.clone(),
                a.features.clone(),
                a.baseline.clone(),
                a.regime.clone(),
                a.fim.clone(),
            ];
            let settings = json!({
                "samples": cfg.forecast.samples,
                "toggles": cfg.toggles()?.to_string(),
                "charts": cfg.forecast.charts,
            });
            runner.run(stage, settings, &inputs, Some(cfg.forecast_seed()), |dir| forecast(cfg, &a, dir))
        }
        Stage::ScenarioSirs => {
            let sc = scenario_section(cfg)?;
            let inputs = vec![a.panel.clone(), cfg.features.influenza.clone()];
            let settings = json!({
                "start": cfg.panel.start,
                "end": cfg.panel.end,
                "iterations": sc.iterations,
                "burn_in": sc.burn_in,
                "samples": sc.samples,
                "population_unit": sc.population_unit,
                "horizon_weeks": cfg.forecast.horizon_weeks,
            });
            runner.run(stage, settings, &inputs, Some(cfg.scenario_seed()), |dir| scenario_sirs(cfg, &a, dir))
        }
        Stage::AssembleScenarios => {
            let sc = scenario_section(cfg)?;
            let mut inputs = vec![a.features.clone(), a.calibration.clone()];
            inputs.extend(SEVERITIES.iter().map(|(s, _)| a.severity_file(s)));
            inputs.extend([sc.rcp26.clone(), sc.rcp45.clone(), sc.rcp85.clone()]);
            inputs.extend(cfg.features.population_grid.clone());
            let settings = json!({
                "admissions": sc.admissions,
                "pairings": default_pairings(),
                "horizon_weeks": cfg.forecast.horizon_weeks,
            });
            runner.run(stage, settings, &inputs, None, |dir| assemble(cfg, &a, dir))
        }
        Stage::ScenarioForecast => {
            let mut inputs = vec![
                a.panel.clone(),
                a.graph.clone(),
                a.features.clone(),
                a.baseline.clone(),
                a.regime.clone(),
                a.fim.clone(),
                cfg.panel.population.clone(),
            ];
            inputs.extend(a.scenario_files());
            let settings = json!({
                "samples": cfg.forecast.samples,
                "toggles": cfg.toggles()?.to_string(),
                "charts": cfg.forecast.charts,
            });
            runner.run(stage, settings, &inputs, Some(cfg.forecast_seed()), |dir| {
                let fitted = Fitted::load(cfg, &a)?;
                let mut excess = Vec::new();
                for pair in default_pairings() {
                    let frame = FeatureFrame::read_csv(&a.scenarios_dir.join(format!("{}.csv", pair.label)))?;
                    let charts = cfg.forecast.charts.then(|| dir.join("charts").join(&pair.label));
                    let rows = horizon_forecast(cfg, &fitted, &frame, dir, &pair.label, charts.as_deref())?;
                    excess.extend(rows.into_iter().map(|r| (pair.label.clone(), r)));
                }
                write_excess(&excess, &dir.join("excess.csv"))
            })
        }
    }
}

fn scenario_section(cfg: &ProjectConfig) -> Result<&crate::config::ScenarioSection> {
    cfg.scenario
        .as_ref()
        .ok_or_else(|| Error::validation("the configuration has no [scenario] section"))
}

fn ingest(cfg: &ProjectConfig, dir: &Path) -> Result<()> {
    let window = cfg.window()?;
    let (panel, graph) = load_panel(&cfg.panel.deaths, &cfg.panel.population, &cfg.panel.adjacency, &window)?;
    let panel = panel.mask_weeks(&cfg.mask()?)?;
    if !graph.is_connected() {
        log::warn!("the region graph is not connected");
    }
    log::info!(
        "ingest: {} regions × {} age groups × {} weeks, {} masked",
        panel.n_regions(),
        panel.n_ages(),
        panel.n_weeks(),
        panel.weight_mask().iter().filter(|&&m| m == 0).count()
    );
    write_json(&panel, &dir.join("panel.json"))?;
    write_json(&graph, &dir.join("graph.json"))
}

fn read_temperature(cfg: &ProjectConfig, path: &Path) -> Result<DailyRegionalSeries> {
    let grid = cfg.features.population_grid.as_deref().map(read_grid_population).transpose()?;
    read_daily_temperature(path, grid.as_deref())
}

fn features(cfg: &ProjectConfig, spec: &RegimeSpec, dir: &Path) -> Result<()> {
    let temperature = read_temperature(cfg, &cfg.features.temperature)?;
    let influenza = read_weekly_entries(&cfg.features.influenza, ILI_COLUMN, ILI_SCALE)?;
    let admissions = cfg
        .features
        .admissions
        .as_deref()
        .map(|p| read_weekly_entries(p, ADMISSIONS_COLUMN, ADMISSIONS_SCALE))
        .transpose()?;
    let config = FeatureConfig {
        hi_q: cfg.features.hi_q,
        lo_q: cfg.features.lo_q,
        exclude_self: cfg.features.exclude_self,
        extra_columns: spec.columns(),
    };
    let (frame, calibration) = build_features(&temperature, &influenza, admissions.as_ref(), &cfg.window()?, &config)?;
    frame.write_csv(&dir.join("features.csv"))?;
    write_json(&calibration, &dir.join("calibration.json"))
}

fn baseline(cfg: &ProjectConfig, a: &Artifacts, dir: &Path) -> Result<()> {
    let panel: MortalityPanel = read_json(&a.panel)?;
    let graph: RegionGraph = read_json(&a.graph)?;
    let fit = fit_baseline(&panel, &graph, &LambdaGrid::uniform(&cfg.baseline.lambda_grid)?)?;
    fit.save(&dir.join("baseline.json"))?;
    let path = dir.join("fitted.csv");
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["region", "age_group", "iso_year", "iso_week", "deaths", "exposure", "baseline"])?;
    for (r, region) in panel.regions().iter().enumerate() {
        for (x, age) in panel.age_groups().iter().enumerate() {
            for (k, week) in panel.weeks().iter().enumerate() {
                let c = panel.cell(r, x, k);
                csv_row(
                    &mut w,
                    &path,
                    [
                        region.clone(),
                        age.clone(),
                        week.year.to_string(),
                        week.week.to_string(),
                        panel.deaths(r, x, k).to_string(),
                        panel.exposure(r, x, k).to_string(),
                        fit.fitted_b[c].to_string(),
                    ],
                )?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn regime(cfg: &ProjectConfig, spec: &RegimeSpec, a: &Artifacts, dir: &Path) -> Result<()> {
    let panel: MortalityPanel = read_json(&a.panel)?;
    let graph: RegionGraph = read_json(&a.graph)?;
    let frame = FeatureFrame::read_csv(&a.features)?;
    let base = BaselineFit::load(&a.baseline)?;
    let standardizer = fit_standardizer(spec, &frame.slice(panel.weeks())?)?;
    let data = RegimeData::build(spec, &panel, &base.fitted_b, &frame, &standardizer)?;
    let icar = Icar::new(&graph)?;
    let init = RegimeParams::initial(&ParamLayout::new(spec, data.n_groups()), spec.shocks);
    let opts = EmOptions { epsilon: cfg.regime.epsilon, max_iter: cfg.regime.max_iter };
    let profile = profile_tau(&data, &icar, &cfg.regime.tau_grid, &init, opts)?;
    let best = profile.best();
    if !best.trace.converged {
        log::warn!("EM at τ = {} stopped after {} iterations without converging", best.tau, best.trace.n_steps());
    }
    log::info!("fit-regime: τ* = {}, log-likelihood {:.3}", profile.tau, best.filter.loglik());
    let fit = RegimeFit::new(spec, &data, best, profile.curve.clone(), standardizer);
    fit.save(&dir.join("regime.json"))?;
    spec.save(&dir.join("spec.toml"))?;

    let path = dir.join("profile.csv");
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["tau", "profile_loglik", "converged", "iterations"])?;
    for ((tau, ll), f) in profile.curve.iter().zip(&profile.fits) {
        csv_row(&mut w, &path, [tau.to_string(), ll.to_string(), f.trace.converged.to_string(), f.trace.n_steps().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("trace.csv");
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["iteration", "q_value", "q_after_m", "loglik", "u_norm", "seconds"])?;
    for it in &best.trace.iterations {
        csv_row(
            &mut w,
            &path,
            [
                it.iteration.to_string(),
                it.q_value.to_string(),
                it.q_after_m.map(|v| v.to_string()).unwrap_or_default(),
                it.loglik.to_string(),
                it.u_norm.to_string(),
                it.seconds.to_string(),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Calibration-window model inputs with the fitted regime model.
pub struct Fitted {
    pub panel: MortalityPanel,
    pub icar: Icar,
    pub base: BaselineFit,
    pub fit: RegimeFit,
    pub data: RegimeData,
    pub fim: Option<FisherEstimate>,
}

impl Fitted {
    fn load_without_fim(a: &Artifacts) -> Result<Self> {
        let panel: MortalityPanel = read_json(&a.panel)?;
        let graph: RegionGraph = read_json(&a.graph)?;
        let frame = FeatureFrame::read_csv(&a.features)?;
        let base = BaselineFit::load(&a.baseline)?;
        let fit = RegimeFit::load(&a.regime)?;
        let data = RegimeData::build(&fit.spec, &panel, &base.fitted_b, &frame, &fit.standardizer)?;
        Ok(Fitted { icar: Icar::new(&graph)?, panel, base, fit, data, fim: None })
    }

    pub fn load(_cfg: &ProjectConfig, a: &Artifacts) -> Result<Self> {
        let mut f = Self::load_without_fim(a)?;
        f.fim = Some(FisherEstimate::load(&a.fim)?);
        Ok(f)
    }
}

fn fim(cfg: &ProjectConfig, a: &Artifacts, dir: &Path) -> Result<()> {
    let f = Fitted::load_without_fim(a)?;
    let labels = ParamLayout::new(&f.fit.spec, f.fit.groups.len()).labels(&f.fit.spec, &f.fit.groups);
    let opts = SpsaOptions { replicates: cfg.fim.replicates, scale: cfg.fim.scale, seed: cfg.fim_seed() };
    let est = spsa_fim(&f.data, &f.fit.params, &f.fit.u, f.fit.tau, &f.icar, labels, &opts)?;
    est.save(&dir.join("fim.json"))?;
    let path = dir.join("standard_errors.csv");
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["parameter", "estimate", "standard_error"])?;
    for ((label, theta), se) in est.labels.iter().zip(f.fit.params.theta()).zip(est.standard_errors()) {
        csv_row(&mut w, &path, [label.clone(), theta.to_string(), se.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn forecast(cfg: &ProjectConfig, a: &Artifacts, dir: &Path) -> Result<()> {
    let f = Fitted::load(cfg, a)?;
    let params = &f.fit.params;
    let filter = filter_all(&f.data, params, &f.fit.u)?;
    let states = best_estimate_states(&filter);
    let be = best_estimate_deaths(&states, &f.data, params)?;
    let (sigma1, sigma2) = coefficient_covariances(&f.base, f.fim.as_ref().expect("loaded"));
    let exposures = f.panel.exposures_slice().to_vec();
    let draws = BaselineDraws::new(&f.base, &sigma1, f.panel.weeks(), exposures.clone())?;
    let setup = BootstrapSetup {
        data: &f.data,
        params,
        sigma2: Some(&sigma2),
        u: &f.fit.u,
        tau: f.fit.tau,
        icar: &f.icar,
        baseline: Some(&draws),
        start: Start::Initial(vec![argmax(&params.rho); f.data.n_regions()]),
        fixed_path: &states,
        exposures: &exposures,
    };
    let bands = bootstrap_predict(&setup, cfg.forecast.samples, cfg.toggles()?, cfg.forecast_seed())?;
    bands.write_csv(&dir.join("bands.csv"))?;

    let n_t = f.panel.n_weeks();
    let mut lines = Vec::with_capacity(be.len());
    for (r, region) in f.panel.regions().iter().enumerate() {
        for (x, age) in f.panel.age_groups().iter().enumerate() {
            for (k, week) in f.panel.weeks().iter().enumerate() {
                let c = f.panel.cell(r, x, k);
                lines.push(LineRow {
                    region: region.clone(),
                    age_group: age.clone(),
                    iso_year: week.year,
                    iso_week: week.week,
                    observed: Some(f64::from(f.panel.deaths(r, x, k))),
                    baseline: f.base.fitted_b[c],
                    best_estimate: be[c],
                    state: states[r * n_t + k],
                });
            }
        }
    }
    write_lines(&lines, &dir.join("best_estimate.csv"))?;
    if cfg.forecast.charts {
        emit_charts(&bands, &lines, &dir.join("charts"))?;
    }
    Ok(())
}

/// Bootstrap forecast over the weeks of a scenario frame, which must start
/// right after the calibration window. Writes `<label>_bands.csv` and
/// `<label>_lines.csv` into `dir` and returns the excess-death summary.
pub fn horizon_forecast(
    cfg: &ProjectConfig,
    f: &Fitted,
    frame: &FeatureFrame,
    dir: &Path,
    label: &str,
    charts: Option<&Path>,
) -> Result<Vec<mortality_regime::forecast::ExcessDeaths>> {
    let horizon = frame.weeks().clone();
    if horizon.first() != f.panel.weeks().last().succ() {
        return Err(Error::validation(format!(
            "scenario {label} starts in {} but the calibration window ends in {}; horizons must follow it directly",
            horizon.first(),
            f.panel.weeks().last()
        )));
    }
    if frame.regions() != f.panel.regions() {
        return Err(Error::validation(format!("scenario {label} covers different regions than the calibration panel")));
    }
    let params = &f.fit.params;
    let ages = f.panel.age_groups().to_vec();
    let population = read_population(&cfg.panel.population)?;
    let exposures = build_exposures(&population, f.panel.regions(), &ages, &horizon)?;
    let b_hat = predict_baseline(&f.base, &horizon, &exposures)?;
    let data = horizon_data(&f.fit.spec, &ages, &horizon, frame, &f.fit.standardizer, b_hat.clone())?;

    let filter = filter_all(&f.data, params, &f.fit.u)?;
    let calib_states = best_estimate_states(&filter);
    let n_cal = f.panel.n_weeks();
    let last: Vec<usize> = (0..f.panel.n_regions()).map(|r| calib_states[r * n_cal + n_cal - 1]).collect();
    let start = Start::After(last);
    let path = most_probable_path(&data, params, &f.fit.u, &start)?;
    let be = best_estimate_deaths(&path, &data, params)?;

    let (sigma1, sigma2) = coefficient_covariances(&f.base, f.fim.as_ref().expect("loaded"));
    let draws = BaselineDraws::new(&f.base, &sigma1, &horizon, exposures.clone())?;
    let setup = BootstrapSetup {
        data: &data,
        params,
        sigma2: Some(&sigma2),
        u: &f.fit.u,
        tau: f.fit.tau,
        icar: &f.icar,
        baseline: Some(&draws),
        start,
        fixed_path: &path,
        exposures: &exposures,
    };
    let bands = bootstrap_predict(&setup, cfg.forecast.samples, cfg.toggles()?, cfg.forecast_seed())?;
    bands.write_csv(&dir.join(format!("{label}_bands.csv")))?;

    let n_t = horizon.len();
    let mut lines = Vec::with_capacity(be.len());
    for (r, region) in f.panel.regions().iter().enumerate() {
        for (x, age) in ages.iter().enumerate() {
            for (k, week) in horizon.iter().enumerate() {
                let c = data.cell(r, x, k);
                lines.push(LineRow {
                    region: region.clone(),
                    age_group: age.clone(),
                    iso_year: week.year,
                    iso_week: week.week,
                    observed: None,
                    baseline: b_hat[c],
                    best_estimate: be[c],
                    state: path[r * n_t + k],
                });
            }
        }
    }
    write_lines(&lines, &dir.join(format!("{label}_lines.csv")))?;
    if let Some(out) = charts {
        emit_charts(&bands, &lines, out)?;
    }
    excess_deaths(&bands, &b_hat)
}

fn write_excess(rows: &[(String, mortality_regime::forecast::ExcessDeaths)], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, ["scenario", "region", "age_group", "relative_excess"])?;
    for (label, e) in rows {
        csv_row(&mut w, path, [label.clone(), e.region.clone(), e.age_group.clone(), e.relative.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Uncached forecast for one scenario file into `<output>/forecast-<stem>`.
pub fn forecast_scenario_file(runner: &mut Runner, scenario: &Path, charts: Option<&Path>) -> Result<PathBuf> {
    run_until(runner, Stage::Fim)?;
    let cfg = runner.cfg;
    let a = Artifacts::new(runner);
    let f = Fitted::load(cfg, &a)?;
    let frame = FeatureFrame::read_csv(scenario)?;
    let stem = scenario.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string();
    let dir = runner.out.join(format!("forecast-{stem}"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let charts = charts.map(Path::to_path_buf).or_else(|| cfg.forecast.charts.then(|| dir.join("charts")));
    let excess = horizon_forecast(cfg, &f, &frame, &dir, &stem, charts.as_deref())?;
    let rows: Vec<_> = excess.into_iter().map(|e| (stem.clone(), e)).collect();
    write_excess(&rows, &dir.join("excess.csv"))?;
    Ok(dir)
}

/// Stream seed of region `r`.
fn region_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64 + 1)
}

fn scenario_sirs(cfg: &ProjectConfig, a: &Artifacts, dir: &Path) -> Result<()> {
    let sc = scenario_section(cfg)?;
    let panel: MortalityPanel = read_json(&a.panel)?;
    let window = cfg.window()?;
    let entries = read_weekly_entries(&cfg.features.influenza, ILI_COLUMN, sc.population_unit / 1e5)?;
    let series = WeeklyRegionalSeries::from_entries(panel.regions(), &window, &entries, None, "influenza file")?;
    let seed = cfg.scenario_seed();
    let levels: Vec<f64> = SEVERITIES.iter().map(|(_, q)| *q).collect();
    let results = panel
        .regions()
        .par_iter()
        .enumerate()
        .map(|(r, region)| {
            let obs: Vec<f64> = (0..window.len()).map(|k| series.value(r, k).round().max(0.0)).collect();
            let opts = McmcOptions {
                iterations: sc.iterations,
                burn_in: sc.burn_in,
                samples: Some(sc.samples),
                seed: region_seed(seed, r),
                ..Default::default()
            };
            let post = sirs_mcmc(region, &obs, &window, sc.population_unit, &opts)?;
            let fc = sirs_forecast(&post, cfg.forecast.horizon_weeks, &levels, false, region_seed(seed, r))?;
            Ok((post, fc))
        })
        .collect::<Result<Vec<_>>>()?;

    for (l, (severity, _)) in SEVERITIES.iter().enumerate() {
        let mut out = WeeklyEntries::new();
        for (post, fc) in &results {
            for (k, week) in fc.weeks.iter().enumerate() {
                out.insert((post.region.clone(), week), fc.trajectories[l][k] * 1e5 / sc.population_unit);
            }
        }
        write_weekly_entries(&out, ILI_COLUMN, 1.0, &a.severity_file(severity))?;
    }

    let path = dir.join("posterior_summary.csv");
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["region", "parameter", "mean", "sd", "acceptance", "clip_events"])?;
    let names: Vec<String> = (1..=13).map(|j| format!("phi{j}")).chain(["psi".into(), "kappa".into(), "zeta".into()]).collect();
    for (post, fc) in &results {
        let draws = post.parameter_draws();
        for (j, name) in names.iter().enumerate() {
            let v: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64).sqrt();
            let acc = post.acceptance.iter().find(|(n, _)| n == name).map(|(_, a)| a.to_string()).unwrap_or_default();
            csv_row(&mut w, &path, [post.region.clone(), name.clone(), mean.to_string(), sd.to_string(), acc, fc.clip_events.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let posteriors: Vec<&SirsPosterior> = results.iter().map(|(p, _)| p).collect();
    write_json(&posteriors, &dir.join("posterior.json"))
}

fn assemble(cfg: &ProjectConfig, a: &Artifacts, dir: &Path) -> Result<()> {
    let sc = scenario_section(cfg)?;
    let history = FeatureFrame::read_csv(&a.features)?;
    let calibration: FeatureCalibration = read_json(&a.calibration)?;
    let horizon = cfg.window()?.continuation(cfg.forecast.horizon_weeks);
    let regions = history.regions().to_vec();

    let mut temperature = BTreeMap::new();
    for (name, path) in PATHWAYS.iter().zip([&sc.rcp26, &sc.rcp45, &sc.rcp85]) {
        if let Some(found) = read_pathway_name(path)? {
            if found != *name {
                return Err(Error::validation(format!(
                    "{} is labelled pathway {found} but was given as {name}",
                    path.display()
                )));
            }
        }
        temperature.insert(name.to_string(), read_temperature(cfg, path)?);
    }
    let mut influenza = BTreeMap::new();
    for (severity, _) in SEVERITIES {
        let entries = read_weekly_entries(&a.severity_file(severity), ILI_COLUMN, ILI_SCALE)?;
        let series = WeeklyRegionalSeries::from_entries(&regions, &horizon, &entries, None, "influenza trajectory")?;
        influenza.insert(severity.to_string(), series);
    }
    let set = assemble_scenarios(&calibration, &history, &temperature, &influenza, sc.admissions, &horizon, &default_pairings())?;
    set.write(dir)?;
    Ok(())
}

/// Rebuilds charts from a bands file and its lines file.
pub fn charts_from_files(bands: &Path, lines: &Path, out: &Path) -> Result<usize> {
    let bands = PredictionBands::read_csv(bands)?;
    let lines = read_lines(lines)?;
    emit_charts(&bands, &lines, out)
}
