//! Covariate construction: hot/cold-week indices, temperature anomalies,
//! influenza anomalies, hospital admissions and their lag averages and
//! quantile hinges.

mod epidemic;
mod frame;
pub mod io;
mod temperature;

pub use epidemic::{seasonal_anomaly, SeasonalNorm, WeeklyRegionalSeries};
pub use frame::{
    apply_hinge, derive_columns, hinge_thresholds, lag_average, ColumnSpec, FeatureFrame, Scaler, Standardizer,
};
pub use temperature::{
    population_weighted_series, temperature_anomalies, temperature_baseline, threshold_indices,
    DailyRegionalSeries, GridCell, GridTemperatures, TemperatureClimatology,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{IsoWeek, WeekIndex};

/// Sparse weekly observations keyed by `(region, ISO week)`.
pub type WeeklyEntries = BTreeMap<(String, IsoWeek), f64>;

pub const BASE_COLUMNS: [&str; 5] = ["TA", "HI", "CI", "IA", "HA"];

/// Columns materialized by default.
pub fn standard_columns() -> Vec<String> {
    let mut out = Vec::new();
    for b in BASE_COLUMNS {
        for suffix in ["", "_lag1", "_lag2", "_avg01", "_avg23"] {
            out.push(format!("{b}{suffix}"));
        }
    }
    for b in ["IA", "HA"] {
        out.push(format!("{b}_avg01_hinge75"));
        out.push(format!("{b}_avg23_hinge75"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub hi_q: f64,
    pub lo_q: f64,
    /// Leave the own year out of the influenza seasonal norm.
    pub exclude_self: bool,
    /// Extra derived columns beyond [`standard_columns`].
    pub extra_columns: Vec<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hi_q: 0.95,
            lo_q: 0.05,
            exclude_self: false,
            extra_columns: Vec::new(),
        }
    }
}

impl FeatureConfig {
    pub fn columns(&self) -> Vec<String> {
        let mut cols = standard_columns();
        for c in &self.extra_columns {
            if !cols.contains(c) {
                cols.push(c.clone());
            }
        }
        cols
    }
}

/// Everything estimated on the calibration window that scenario features reuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCalibration {
    pub config: FeatureConfig,
    pub climatology: TemperatureClimatology,
    pub influenza_norm: SeasonalNorm,
    pub hinges: BTreeMap<String, Vec<f64>>,
}

fn week_before(w: IsoWeek, n: usize) -> IsoWeek {
    w.monday().add_days(-7 * n as i64).iso_week()
}

/// Builds the calibration feature frame over `window`.
///
/// Temperatures and influenza incidences (per 100) from before the window
/// are used as lag history when present; hospital admissions (per 1,000)
/// are zero outside the supplied entries.
pub fn build_features(
    temperature: &DailyRegionalSeries,
    influenza: &WeeklyEntries,
    admissions: Option<&WeeklyEntries>,
    window: &WeekIndex,
    config: &FeatureConfig,
) -> Result<(FeatureFrame, FeatureCalibration)> {
    let regions = temperature.regions().to_vec();
    let columns = config.columns();
    let specs = columns.iter().map(|c| ColumnSpec::parse(c)).collect::<Result<Vec<_>>>()?;
    let max_lag = specs.iter().map(ColumnSpec::max_lag).max().unwrap_or(0);

    let mut history = 0;
    for h in (1..=max_lag).rev() {
        let ext = WeekIndex::from_start(week_before(window.first(), h), h);
        let ili_ok = regions
            .iter()
            .all(|r| ext.iter().all(|w| influenza.contains_key(&(r.clone(), w))));
        if temperature.covers(&ext) && ili_ok {
            history = h;
            break;
        }
    }
    let extended = WeekIndex::from_start(week_before(window.first(), history), window.len() + history);

    let climatology = TemperatureClimatology::fit(&temperature.restrict(window)?, config.hi_q, config.lo_q)?;
    let ta = temperature_anomalies(temperature, &climatology, &extended)?;
    let (hi, ci) = threshold_indices(temperature, &climatology, &extended)?;

    let ili = WeeklyRegionalSeries::from_entries(&regions, &extended, influenza, None, "influenza file")?;
    let influenza_norm = SeasonalNorm::fit(&ili);
    let ia = seasonal_anomaly(&ili, config.exclude_self)?;
    let empty = WeeklyEntries::new();
    let ha = WeeklyRegionalSeries::from_entries(&regions, &extended, admissions.unwrap_or(&empty), Some(0.0), "admissions")?;

    let mut base = FeatureFrame::new(regions, extended);
    base.set_column("TA", ta)?;
    base.set_column("HI", hi)?;
    base.set_column("CI", ci)?;
    base.set_column("IA", ia.values)?;
    base.set_column("HA", ha.values)?;
    let frame = derive_columns(&base, window, &columns, None)?;
    let calibration = FeatureCalibration {
        config: config.clone(),
        climatology,
        influenza_norm,
        hinges: frame.hinges.clone(),
    };
    Ok((frame, calibration))
}

/// Builds features over a forecast horizon from scenario inputs, with
/// thresholds, baselines, norms and hinges frozen at their calibration
/// values. `history` (the calibration frame) supplies lagged values when the
/// horizon starts right after it.
pub fn scenario_features(
    calibration: &FeatureCalibration,
    history: &FeatureFrame,
    temperature: &DailyRegionalSeries,
    influenza: &WeeklyRegionalSeries,
    admissions: f64,
    horizon: &WeekIndex,
) -> Result<FeatureFrame> {
    let regions = calibration.climatology.regions.clone();
    if influenza.regions != regions || history.regions() != regions.as_slice() {
        return Err(Error::validation("scenario inputs cover different regions than the calibration"));
    }
    let ta = temperature_anomalies(temperature, &calibration.climatology, horizon)?;
    let (hi, ci) = threshold_indices(temperature, &calibration.climatology, horizon)?;
    let ia = calibration.influenza_norm.anomalies(&influenza.slice(horizon)?)?;
    let mut base = FeatureFrame::new(regions, horizon.clone());
    base.set_column("TA", ta)?;
    base.set_column("HI", hi)?;
    base.set_column("CI", ci)?;
    base.set_column("IA", ia.values)?;
    base.set_column("HA", vec![admissions; base.n_cells()])?;

    let columns = calibration.config.columns();
    let max_lag = columns
        .iter()
        .map(|c| ColumnSpec::parse(c).map(|s| s.max_lag()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(0);
    let adjacent = history.weeks().last().succ() == horizon.first();
    let combined = if adjacent && max_lag > 0 {
        let h = max_lag.min(history.weeks().len());
        let tail_weeks = WeekIndex::from_start(week_before(horizon.first(), h), h);
        let mut tail = FeatureFrame::new(history.regions().to_vec(), tail_weeks.clone());
        let sliced = history.slice(&tail_weeks)?;
        for b in BASE_COLUMNS {
            tail.set_column(b, sliced.require(b)?.to_vec())?;
        }
        tail.append(&base)?
    } else {
        base
    };
    derive_columns(&combined, horizon, &columns, Some(&calibration.hinges))
}
