//! `mortregime`: batch pipeline from raw death counts to scenario forecasts.

mod charts;
mod config;
mod pipeline;
mod simulate;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mortality_regime::error::{Error, Result};
use mortality_regime::panel::IsoWeek;

use config::{parse_list, ProjectConfig};
use pipeline::{Runner, Stage};

#[derive(Parser, Debug)]
#[command(name = "mortregime", version, about = "Regional weekly mortality: baseline, regime-switching fit, bootstrap and scenario forecasts")]
struct Cli {
    /// Project configuration file.
    #[arg(long, short = 'c', global = true, default_value = "project.toml")]
    config: PathBuf,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Rerun stages even when cached results are fresh.
    #[arg(long, global = true)]
    force: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone)]
struct FloatList(Vec<f64>);

fn float_list(s: &str) -> std::result::Result<FloatList, String> {
    parse_list(s).map(FloatList)
}

/// Settings that override the configuration file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Baseline smoothing grid, comma separated.
    #[arg(long, global = true, value_parser = float_list)]
    lambda_grid: Option<FloatList>,
    /// Weeks left out of the baseline fit, e.g. 2020-W12..2020-W20,2021-W02.
    #[arg(long, global = true, value_delimiter = ',')]
    mask_weeks: Option<Vec<String>>,
    /// Regime covariate specification file.
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Spatial precision grid, comma separated.
    #[arg(long, global = true, value_parser = float_list)]
    tau_grid: Option<FloatList>,
    /// EM relative convergence tolerance.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// SPSA replicates M.
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// SPSA perturbation scale c.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Seed of the stage being run (all stages for `run`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Bootstrap samples.
    #[arg(long = "B", global = true)]
    bootstrap: Option<usize>,
    /// Uncertainty sources: param,spatial,state,poisson, all or none.
    #[arg(long, global = true)]
    toggles: Option<String>,
    /// MCMC iterations of the SIRS fit.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// MCMC burn-in of the SIRS fit.
    #[arg(long, global = true)]
    burn_in: Option<usize>,
    /// RCP2.6 temperature projection.
    #[arg(long, global = true)]
    rcp26: Option<PathBuf>,
    /// RCP4.5 temperature projection.
    #[arg(long, global = true)]
    rcp45: Option<PathBuf>,
    /// RCP8.5 temperature projection.
    #[arg(long, global = true)]
    rcp85: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load deaths, population and adjacency into a validated panel.
    Ingest,
    /// Build the covariate frame.
    Features,
    /// Fit the penalized seasonal baseline.
    FitBaseline,
    /// Fit the regime-switching model over the τ grid.
    FitRegime,
    /// Estimate the Fisher information by SPSA.
    Fim,
    /// In-sample bootstrap bands, or a horizon forecast with --scenario.
    Forecast {
        /// Scenario covariate file starting right after the calibration window.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Directory for the charts of this forecast.
        #[arg(long)]
        emit_charts: Option<PathBuf>,
    },
    /// Fit the SIRS influenza model and write severity trajectories.
    ScenarioSirs,
    /// Combine temperature pathways and influenza severities.
    AssembleScenarios,
    /// Run every stage, scenarios included when configured.
    Run,
    /// Write a synthetic project drawn from a planted model.
    Simulate {
        /// Output directory.
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        regions: usize,
        #[arg(long, default_value_t = 2)]
        ages: usize,
        /// Calibration weeks.
        #[arg(long, default_value_t = 156)]
        weeks: usize,
        /// Horizon weeks.
        #[arg(long, default_value_t = 26)]
        horizon: usize,
        /// First calibration week.
        #[arg(long, default_value = "2016-W01")]
        start: String,
    },
    /// Render charts from a bands file and its best-estimate lines.
    Charts {
        #[arg(long)]
        bands: PathBuf,
        #[arg(long)]
        lines: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn apply(cfg: &mut ProjectConfig, o: &Overrides, command: &Command) -> Result<()> {
    if let Some(v) = &o.lambda_grid {
        cfg.baseline.lambda_grid = v.0.clone();
    }
    if let Some(v) = &o.mask_weeks {
        cfg.panel.mask_weeks = v.clone();
    }
    if let Some(v) = &o.spec {
        cfg.regime.spec = Some(absolute(v)?);
    }
    if let Some(v) = &o.tau_grid {
        cfg.regime.tau_grid = v.0.clone();
    }
    if let Some(v) = o.epsilon {
        cfg.regime.epsilon = v;
    }
    if let Some(v) = o.replicates {
        cfg.fim.replicates = v;
    }
    if let Some(v) = o.scale {
        cfg.fim.scale = Some(v);
    }
    if let Some(v) = o.bootstrap {
        cfg.forecast.samples = v;
    }
    if let Some(v) = &o.toggles {
        cfg.forecast.toggles = v.clone();
    }
    if let Some(seed) = o.seed {
        match command {
            Command::Fim => cfg.fim.seed = Some(seed),
            Command::Forecast { .. } => cfg.forecast.seed = Some(seed),
            Command::ScenarioSirs => {
                if let Some(s) = &mut cfg.scenario {
                    s.seed = Some(seed);
                }
            }
            _ => {
                cfg.project.seed = seed;
                cfg.fim.seed = None;
                cfg.forecast.seed = None;
                if let Some(s) = &mut cfg.scenario {
                    s.seed = None;
                }
            }
        }
    }
    let scenario_flags = o.iterations.is_some()
        || o.burn_in.is_some()
        || o.rcp26.is_some()
        || o.rcp45.is_some()
        || o.rcp85.is_some();
    if scenario_flags {
        let s = cfg
            .scenario
            .as_mut()
            .ok_or_else(|| Error::validation("scenario flags need a [scenario] section in the configuration"))?;
        if let Some(v) = o.iterations {
            s.iterations = v;
        }
        if let Some(v) = o.burn_in {
            s.burn_in = v;
        }
        if let Some(v) = &o.rcp26 {
            s.rcp26 = absolute(v)?;
        }
        if let Some(v) = &o.rcp45 {
            s.rcp45 = absolute(v)?;
        }
        if let Some(v) = &o.rcp85 {
            s.rcp85 = absolute(v)?;
        }
    }
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    Ok(cwd.join(p))
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { out, regions, ages, weeks, horizon, start } => {
            let opts = simulate::SimulateOptions {
                out: out.clone(),
                regions: *regions,
                ages: *ages,
                weeks: *weeks,
                horizon: *horizon,
                start: start.parse::<IsoWeek>()?,
                seed: cli.overrides.seed.unwrap_or(1),
                ..Default::default()
            };
            let path = simulate::simulate_project(&opts)?;
            println!("{}", path.display());
            return Ok(());
        }
        Command::Charts { bands, lines, out } => {
            let n = stages::charts_from_files(bands, lines, out)?;
            println!("{n} charts written to {}", out.display());
            return Ok(());
        }
        _ => {}
    }

    let mut cfg = ProjectConfig::load(&cli.config)?;
    apply(&mut cfg, &cli.overrides, &cli.command)?;
    cfg.validate()?;
    let mut runner = Runner::new(&cfg, cli.force)?;
    let target = match &cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Features => Stage::Features,
        Command::FitBaseline => Stage::FitBaseline,
        Command::FitRegime => Stage::FitRegime,
        Command::Fim => Stage::Fim,
        Command::Forecast { scenario: Some(file), emit_charts } => {
            let dir = stages::forecast_scenario_file(&mut runner, file, emit_charts.as_deref())?;
            println!("{}", dir.display());
            return Ok(());
        }
        Command::Forecast { scenario: None, emit_charts } => {
            stages::run_until(&mut runner, Stage::Forecast)?;
            if let Some(out) = emit_charts {
                let dir = runner.dir(Stage::Forecast);
                stages::charts_from_files(&dir.join("bands.csv"), &dir.join("best_estimate.csv"), out)?;
            }
            return Ok(());
        }
        Command::ScenarioSirs => Stage::ScenarioSirs,
        Command::AssembleScenarios => Stage::AssembleScenarios,
        Command::Run => {
            stages::run_until(&mut runner, Stage::Forecast)?;
            if cfg.scenario.is_some() {
                stages::run_until(&mut runner, Stage::ScenarioForecast)?;
            }
            return Ok(());
        }
        Command::Simulate { .. } | Command::Charts { .. } => unreachable!("handled above"),
    };
    stages::run_until(&mut runner, target)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not set the thread count: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
