//! Forecast-horizon covariates: a stochastic SIRS model for weekly influenza
//! incidence fitted by adaptive random-walk Metropolis, and the assembly of
//! temperature-pathway × influenza-severity scenario sets.

mod mcmc;
mod sirs;

pub use mcmc::{
    sirs_forecast, sirs_mcmc, split_rhat, McmcOptions, SirsForecast, SirsPosterior, SirsPriors, SirsSample, MIN_WEEKS,
    WARMUP_WEEKS,
};
pub use sirs::{
    q_of_week, simulate_sirs, sirs_lambda, sirs_step, sirs_step_sampled, SirsParams, SirsState, SirsStep, N_BLOCKS,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{scenario_features, DailyRegionalSeries, FeatureCalibration, FeatureFrame, WeeklyRegionalSeries};
use crate::panel::WeekIndex;

/// Influenza severities as posterior predictive quantile levels.
pub const SEVERITIES: [(&str, f64); 3] = [("moderate", 0.5), ("high", 0.8), ("severe", 0.95)];

/// One temperature pathway combined with one influenza severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub label: String,
    pub pathway: String,
    pub severity: String,
}

/// RCP2.6 × moderate, RCP4.5 × high, RCP8.5 × severe.
pub fn default_pairings() -> Vec<Pairing> {
    [("scenario1", "RCP2.6", "moderate"), ("scenario2", "RCP4.5", "high"), ("scenario3", "RCP8.5", "severe")]
        .iter()
        .map(|(l, p, s)| Pairing { label: l.to_string(), pathway: p.to_string(), severity: s.to_string() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub label: String,
    pub pathway: String,
    pub severity: String,
    pub influenza_quantile: f64,
    /// Hospital admissions per 1,000 assumed over the horizon.
    pub admissions: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub provenance: Provenance,
    pub frame: FeatureFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub horizon: WeekIndex,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn get(&self, label: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.provenance.label == label)
    }

    /// Writes `<label>.csv` and a `<label>.json` provenance sidecar per scenario.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = Vec::new();
        for s in &self.scenarios {
            let csv = dir.join(format!("{}.csv", s.provenance.label));
            s.frame.write_csv(&csv)?;
            let meta = dir.join(format!("{}.json", s.provenance.label));
            let text = serde_json::to_string_pretty(&s.provenance).map_err(|e| Error::format(&meta, e.to_string()))?;
            std::fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
            out.push(csv);
            out.push(meta);
        }
        Ok(out)
    }
}

/// Builds every scenario's covariates over `horizon` with the calibration
/// thresholds, baselines, norms and hinges frozen. `temperature` is keyed by
/// pathway name and `influenza` by severity name.
pub fn assemble_scenarios(
    calibration: &FeatureCalibration,
    history: &FeatureFrame,
    temperature: &BTreeMap<String, DailyRegionalSeries>,
    influenza: &BTreeMap<String, WeeklyRegionalSeries>,
    admissions: f64,
    horizon: &WeekIndex,
    pairings: &[Pairing],
) -> Result<ScenarioSet> {
    let mut scenarios = Vec::new();
    for pair in pairings {
        let temp = temperature
            .get(&pair.pathway)
            .ok_or_else(|| Error::validation(format!("no temperature projection for pathway {}", pair.pathway)))?;
        if !temp.covers(horizon) {
            return Err(Error::validation(format!(
                "temperature projection {} covers {}..{} but the horizon needs {}..{}",
                pair.pathway,
                temp.start(),
                temp.end(),
                horizon.first().monday(),
                horizon.last().monday().add_days(6)
            )));
        }
        let flu = influenza
            .get(&pair.severity)
            .ok_or_else(|| Error::validation(format!("no influenza trajectory for severity {}", pair.severity)))?;
        let missing: Vec<String> = horizon.iter().filter(|w| flu.weeks.t_of(*w).is_none()).map(|w| w.to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::validation(format!(
                "influenza trajectory {} misses horizon weeks {}",
                pair.severity,
                missing.join(", ")
            )));
        }
        let quantile = SEVERITIES
            .iter()
            .find(|(n, _)| *n == pair.severity)
            .map(|(_, q)| *q)
            .ok_or_else(|| Error::validation(format!("unknown influenza severity {}", pair.severity)))?;
        let frame = scenario_features(calibration, history, temp, flu, admissions, horizon)?;
        scenarios.push(Scenario {
            provenance: Provenance {
                label: pair.label.clone(),
                pathway: pair.pathway.clone(),
                severity: pair.severity.clone(),
                influenza_quantile: quantile,
                admissions,
            },
            frame,
        });
    }
    Ok(ScenarioSet { horizon: horizon.clone(), scenarios })
}
