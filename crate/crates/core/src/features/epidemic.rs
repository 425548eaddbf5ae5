//! Weekly epidemic series and seasonal-norm anomalies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{IsoWeek, WeekIndex};

/// Weekly values per region, laid out `values[r * T + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyRegionalSeries {
    pub regions: Vec<String>,
    pub weeks: WeekIndex,
    pub values: Vec<f64>,
}

impl WeeklyRegionalSeries {
    pub fn new(regions: Vec<String>, weeks: WeekIndex, values: Vec<f64>) -> Result<Self> {
        if values.len() != regions.len() * weeks.len() {
            return Err(Error::validation(format!(
                "weekly series needs {} values, got {}",
                regions.len() * weeks.len(),
                values.len()
            )));
        }
        Ok(WeeklyRegionalSeries { regions, weeks, values })
    }

    /// Builds a series from sparse `(region, week) -> value` entries;
    /// weeks without an entry get `fill` (or an error when `fill` is `None`).
    pub fn from_entries(
        regions: &[String],
        weeks: &WeekIndex,
        entries: &BTreeMap<(String, IsoWeek), f64>,
        fill: Option<f64>,
        what: &str,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(regions.len() * weeks.len());
        for region in regions {
            for week in weeks.iter() {
                match entries.get(&(region.clone(), week)).copied().or(fill) {
                    Some(v) => values.push(v),
                    None => {
                        return Err(Error::validation(format!(
                            "{what} has no value for region '{region}' in week {week}"
                        )))
                    }
                }
            }
        }
        WeeklyRegionalSeries::new(regions.to_vec(), weeks.clone(), values)
    }

    pub fn value(&self, r: usize, k: usize) -> f64 {
        self.values[r * self.weeks.len() + k]
    }

    /// Sub-series over `window`, which must lie inside this series.
    pub fn slice(&self, window: &WeekIndex) -> Result<Self> {
        let k0 = self.weeks.t_of(window.first()).ok_or_else(|| {
            Error::validation(format!("week {} is outside the series", window.first()))
        })? - 1;
        if k0 + window.len() > self.weeks.len() {
            return Err(Error::validation(format!("week {} is outside the series", window.last())));
        }
        let t = self.weeks.len();
        let values = (0..self.regions.len())
            .flat_map(|r| self.values[r * t + k0..r * t + k0 + window.len()].iter().copied())
            .collect();
        WeeklyRegionalSeries::new(self.regions.clone(), window.clone(), values)
    }
}

/// Cross-year mean per (region, ISO week number) from a reference series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalNorm {
    pub regions: Vec<String>,
    /// `norms[r][w - 1]`, `None` where no year has that week.
    pub norms: Vec<Vec<Option<f64>>>,
}

impl SeasonalNorm {
    pub fn fit(series: &WeeklyRegionalSeries) -> Self {
        let t = series.weeks.len();
        let norms = (0..series.regions.len())
            .map(|r| {
                let mut sum = [0.0f64; 53];
                let mut n = [0usize; 53];
                for k in 0..t {
                    let w = series.weeks.w(k + 1) as usize;
                    sum[w - 1] += series.value(r, k);
                    n[w - 1] += 1;
                }
                (0..53).map(|i| (n[i] > 0).then(|| sum[i] / n[i] as f64)).collect()
            })
            .collect();
        SeasonalNorm { regions: series.regions.clone(), norms }
    }

    /// Norm for ISO week `w`; week 53 falls back to week 52 when no reference year has it.
    pub fn norm(&self, r: usize, w: u32) -> Option<f64> {
        let v = self.norms[r][w as usize - 1];
        if v.is_none() && w == 53 {
            return self.norms[r][51];
        }
        v
    }

    /// Deviations of `series` from the stored norms.
    pub fn anomalies(&self, series: &WeeklyRegionalSeries) -> Result<WeeklyRegionalSeries> {
        if series.regions != self.regions {
            return Err(Error::validation("series regions differ from the seasonal-norm regions"));
        }
        let t = series.weeks.len();
        let mut values = Vec::with_capacity(series.values.len());
        for r in 0..series.regions.len() {
            for k in 0..t {
                let w = series.weeks.w(k + 1);
                let norm = self.norm(r, w).ok_or_else(|| {
                    Error::validation(format!(
                        "no seasonal norm for region '{}' in ISO week {w}",
                        self.regions[r]
                    ))
                })?;
                values.push(series.value(r, k) - norm);
            }
        }
        WeeklyRegionalSeries::new(series.regions.clone(), series.weeks.clone(), values)
    }
}

/// `value(r, t) − norm(r, w(t))` with the norm the cross-year mean for the
/// ISO week, optionally leaving out the year of `t` itself.
pub fn seasonal_anomaly(series: &WeeklyRegionalSeries, exclude_self: bool) -> Result<WeeklyRegionalSeries> {
    if !exclude_self {
        let norm = SeasonalNorm::fit(series);
        return norm.anomalies(series);
    }
    let t = series.weeks.len();
    let mut values = Vec::with_capacity(series.values.len());
    for r in 0..series.regions.len() {
        let mut slots: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        for k in 0..t {
            let e = slots.entry(series.weeks.w(k + 1)).or_insert((0.0, 0));
            e.0 += series.value(r, k);
            e.1 += 1;
        }
        for k in 0..t {
            let w = series.weeks.w(k + 1);
            let (sum, n) = slots[&w];
            if n < 2 {
                return Err(Error::validation(format!(
                    "ISO week {w} in region '{}' has no other year to form a seasonal norm",
                    series.regions[r]
                )));
            }
            let v = series.value(r, k);
            values.push(v - (sum - v) / (n - 1) as f64);
        }
    }
    WeeklyRegionalSeries::new(series.regions.clone(), series.weeks.clone(), values)
}
