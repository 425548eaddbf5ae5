//! Project configuration: one TOML file with a section per pipeline module.
//! Relative paths resolve against the directory holding the file.

use std::path::{Path, PathBuf};

use mortality_regime::em::DEFAULT_TAU_GRID;
use mortality_regime::error::{Error, Result};
use mortality_regime::forecast::{Toggles, DEFAULT_SAMPLES};
use mortality_regime::panel::{IsoWeek, WeekIndex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default)]
    pub project: ProjectSection,
    pub panel: PanelSection,
    pub features: FeaturesSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub regime: RegimeSection,
    #[serde(default)]
    pub fim: FimSection,
    #[serde(default)]
    pub forecast: ForecastSection,
    #[serde(default)]
    pub scenario: Option<ScenarioSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectSection {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Seed used by every stage without its own.
    #[serde(default)]
    pub seed: u64,
}

impl Default for ProjectSection {
    fn default() -> Self {
        ProjectSection { output: default_output(), seed: 0 }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSection {
    pub deaths: PathBuf,
    pub population: PathBuf,
    pub adjacency: PathBuf,
    /// First calibration week, e.g. `2013-W01`.
    pub start: String,
    pub end: String,
    /// Weeks left out of the baseline fit: single weeks or `a..b` ranges.
    #[serde(default)]
    pub mask_weeks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub temperature: PathBuf,
    #[serde(default)]
    pub population_grid: Option<PathBuf>,
    pub influenza: PathBuf,
    #[serde(default)]
    pub admissions: Option<PathBuf>,
    #[serde(default = "hi_q")]
    pub hi_q: f64,
    #[serde(default = "lo_q")]
    pub lo_q: f64,
    #[serde(default)]
    pub exclude_self: bool,
}

fn hi_q() -> f64 {
    0.95
}

fn lo_q() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(default = "lambda_grid")]
    pub lambda_grid: Vec<f64>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection { lambda_grid: lambda_grid() }
    }
}

fn lambda_grid() -> Vec<f64> {
    vec![0.0, 0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    /// Covariate specification; the case-study model when absent.
    #[serde(default)]
    pub spec: Option<PathBuf>,
    #[serde(default = "tau_grid")]
    pub tau_grid: Vec<f64>,
    #[serde(default = "epsilon")]
    pub epsilon: f64,
    #[serde(default = "max_iter")]
    pub max_iter: usize,
}

impl Default for RegimeSection {
    fn default() -> Self {
        RegimeSection { spec: None, tau_grid: tau_grid(), epsilon: epsilon(), max_iter: max_iter() }
    }
}

fn tau_grid() -> Vec<f64> {
    DEFAULT_TAU_GRID.to_vec()
}

fn epsilon() -> f64 {
    1e-6
}

fn max_iter() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FimSection {
    #[serde(default = "replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for FimSection {
    fn default() -> Self {
        FimSection { replicates: replicates(), scale: None, seed: None }
    }
}

fn replicates() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSection {
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default = "toggles")]
    pub toggles: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Weeks after the calibration window covered by scenario forecasts.
    #[serde(default = "horizon_weeks")]
    pub horizon_weeks: usize,
    #[serde(default = "yes")]
    pub charts: bool,
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection { samples: samples(), toggles: toggles(), seed: None, horizon_weeks: horizon_weeks(), charts: true }
    }
}

fn samples() -> usize {
    DEFAULT_SAMPLES
}

fn toggles() -> String {
    "all".into()
}

fn horizon_weeks() -> usize {
    52
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub rcp26: PathBuf,
    pub rcp45: PathBuf,
    pub rcp85: PathBuf,
    /// Hospital admissions per 1,000 assumed over the horizon.
    #[serde(default)]
    pub admissions: f64,
    #[serde(default = "iterations")]
    pub iterations: usize,
    #[serde(default = "burn_in")]
    pub burn_in: usize,
    #[serde(default = "posterior_samples")]
    pub samples: usize,
    /// Population unit of the influenza counts (per 100,000).
    #[serde(default = "population_unit")]
    pub population_unit: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn iterations() -> usize {
    20_000
}

fn burn_in() -> usize {
    10_000
}

fn posterior_samples() -> usize {
    1000
}

fn population_unit() -> f64 {
    1e5
}

impl ProjectConfig {
    pub fn from_toml_str(text: &str, root: &Path) -> Result<Self> {
        let mut cfg: ProjectConfig =
            toml::from_str(text).map_err(|e| Error::validation(format!("project configuration: {e}")))?;
        cfg.resolve(root);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &root).map_err(|e| match e {
            Error::Validation(m) => Error::format(path, m),
            other => other,
        })
    }

    fn resolve(&mut self, root: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        fix(&mut self.project.output);
        fix(&mut self.panel.deaths);
        fix(&mut self.panel.population);
        fix(&mut self.panel.adjacency);
        fix(&mut self.features.temperature);
        fix(&mut self.features.influenza);
        self.features.population_grid.iter_mut().for_each(fix);
        self.features.admissions.iter_mut().for_each(fix);
        self.regime.spec.iter_mut().for_each(fix);
        if let Some(s) = &mut self.scenario {
            fix(&mut s.rcp26);
            fix(&mut s.rcp45);
            fix(&mut s.rcp85);
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml_string().as_bytes())
    }

    pub fn window(&self) -> Result<WeekIndex> {
        let start: IsoWeek = self.panel.start.parse()?;
        let end: IsoWeek = self.panel.end.parse()?;
        WeekIndex::build((start.year, start.week), (end.year, end.week))
    }

    pub fn mask(&self) -> Result<Vec<IsoWeek>> {
        let mut out = Vec::new();
        for item in &self.panel.mask_weeks {
            match item.split_once("..") {
                Some((a, b)) => {
                    let (a, b): (IsoWeek, IsoWeek) = (a.parse()?, b.parse()?);
                    out.extend(WeekIndex::build((a.year, a.week), (b.year, b.week))?.iter());
                }
                None => out.push(item.parse()?),
            }
        }
        Ok(out)
    }

    pub fn toggles(&self) -> Result<Toggles> {
        self.forecast.toggles.parse()
    }

    pub fn fim_seed(&self) -> u64 {
        self.fim.seed.unwrap_or(self.project.seed)
    }

    pub fn forecast_seed(&self) -> u64 {
        self.forecast.seed.unwrap_or(self.project.seed)
    }

    pub fn scenario_seed(&self) -> u64 {
        self.scenario.as_ref().and_then(|s| s.seed).unwrap_or(self.project.seed)
    }

    /// Every raw input file named by the configuration.
    pub fn input_files(&self) -> Vec<&Path> {
        let mut files: Vec<&Path> = vec![
            &self.panel.deaths,
            &self.panel.population,
            &self.panel.adjacency,
            &self.features.temperature,
            &self.features.influenza,
        ];
        files.extend(self.features.population_grid.as_deref());
        files.extend(self.features.admissions.as_deref());
        files.extend(self.regime.spec.as_deref());
        if let Some(s) = &self.scenario {
            files.extend([s.rcp26.as_path(), s.rcp45.as_path(), s.rcp85.as_path()]);
        }
        files
    }

    /// Checks files and settings before any stage runs.
    pub fn validate(&self) -> Result<()> {
        for f in self.input_files() {
            if !f.is_file() {
                return Err(Error::validation(format!("input file {} does not exist", f.display())));
            }
        }
        self.window()?;
        self.mask()?;
        self.toggles()?;
        if self.baseline.lambda_grid.is_empty() || self.baseline.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::validation("the λ grid must be a nonempty list of finite nonnegative values"));
        }
        if self.regime.tau_grid.is_empty() || self.regime.tau_grid.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::validation("the τ grid must be a nonempty list of positive values"));
        }
        if !(self.regime.epsilon > 0.0) || self.regime.max_iter == 0 {
            return Err(Error::validation("EM needs a positive tolerance and at least one iteration"));
        }
        if self.fim.replicates == 0 {
            return Err(Error::validation("the number of SPSA replicates must be at least 1"));
        }
        if self.forecast.samples == 0 || self.forecast.horizon_weeks == 0 {
            return Err(Error::validation("bootstrap samples and horizon weeks must be positive"));
        }
        let q_ok = |q: f64| q > 0.0 && q < 1.0;
        if !q_ok(self.features.hi_q) || !q_ok(self.features.lo_q) || self.features.lo_q >= self.features.hi_q {
            return Err(Error::validation("temperature quantiles must satisfy 0 < lo_q < hi_q < 1"));
        }
        if let Some(s) = &self.scenario {
            if s.iterations <= s.burn_in || s.samples == 0 {
                return Err(Error::validation("SIRS MCMC needs iterations > burn_in and at least one retained sample"));
            }
            if !(s.population_unit > 0.0) || !(s.admissions >= 0.0) {
                return Err(Error::validation("population unit must be positive and admissions nonnegative"));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Comma-separated floats, as given on the command line.
pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| format!("'{p}' is not a number")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[panel]
deaths = "deaths.csv"
population = "population.csv"
adjacency = "adjacency.csv"
start = "2013-W01"
end = "2024-W26"
mask_weeks = ["2020-W12..2020-W16", "2021-W01"]

[features]
temperature = "temperature.csv"
influenza = "ili.csv"
"#;

    #[test]
    fn defaults_and_resolution() {
        let cfg = ProjectConfig::from_toml_str(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(cfg.panel.deaths, PathBuf::from("/data/deaths.csv"));
        assert_eq!(cfg.project.output, PathBuf::from("/data/output"));
        assert_eq!(cfg.window().unwrap().len(), 600);
        assert_eq!(cfg.mask().unwrap().len(), 6);
        assert_eq!(cfg.regime.tau_grid, vec![0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0]);
        assert_eq!(cfg.forecast.samples, 25_000);
        assert_eq!(cfg.toggles().unwrap(), Toggles::all());
        assert!(cfg.scenario.is_none());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ProjectConfig::from_toml_str(MINIMAL, Path::new("/data")).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.fim.replicates = 10;
        assert_ne!(a.hash(), b.hash());
        let back = ProjectConfig::from_toml_str(&a.to_toml_string(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn unknown_keys_and_missing_files_are_rejected() {
        let typo = MINIMAL.replace("mask_weeks", "mask_week");
        assert!(ProjectConfig::from_toml_str(&typo, Path::new("/")).is_err());
        let cfg = ProjectConfig::from_toml_str(MINIMAL, Path::new("/nonexistent")).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("deaths.csv"), "{err}");
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list("0.1, 1,10").unwrap(), vec![0.1, 1.0, 10.0]);
        assert!(parse_list("1,x").is_err());
    }
}
