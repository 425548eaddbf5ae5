//! Daily regional temperatures, extreme-temperature indices and anomalies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CivilDate, WeekIndex};
use crate::stats::quantile;

/// Daily values per region on a contiguous range of calendar days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRegionalSeries {
    regions: Vec<String>,
    start: CivilDate,
    n_days: usize,
    values: Vec<f64>,
}

impl DailyRegionalSeries {
    /// `values` is laid out region-major: `values[r * n_days + d]`.
    pub fn new(regions: Vec<String>, start: CivilDate, n_days: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != regions.len() * n_days {
            return Err(Error::validation(format!(
                "daily series needs {} values, got {}",
                regions.len() * n_days,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "daily series has a missing or non-finite value for region '{}' on {}",
                regions[i / n_days],
                start.add_days((i % n_days) as i64)
            )));
        }
        Ok(DailyRegionalSeries { regions, start, n_days, values })
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn start(&self) -> CivilDate {
        self.start
    }

    pub fn end(&self) -> CivilDate {
        self.start.add_days(self.n_days as i64 - 1)
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn date(&self, d: usize) -> CivilDate {
        self.start.add_days(d as i64)
    }

    pub fn region(&self, r: usize) -> &[f64] {
        &self.values[r * self.n_days..(r + 1) * self.n_days]
    }

    pub fn value(&self, r: usize, d: usize) -> f64 {
        self.values[r * self.n_days + d]
    }

    pub fn day_offset(&self, date: CivilDate) -> Option<usize> {
        let off = date.days() - self.start.days();
        usize::try_from(off).ok().filter(|&o| o < self.n_days)
    }

    /// Whether every day of the ISO weeks in `weeks` is present.
    pub fn covers(&self, weeks: &WeekIndex) -> bool {
        self.day_offset(weeks.first().monday()).is_some()
            && self.day_offset(weeks.last().monday().add_days(6)).is_some()
    }

    /// Restricts the series to the days of the given weeks.
    pub fn restrict(&self, weeks: &WeekIndex) -> Result<Self> {
        let first = self.week_start_offset(weeks, 1)?;
        let n = weeks.len() * 7;
        let values = (0..self.regions.len())
            .flat_map(|r| self.region(r)[first..first + n].iter().copied())
            .collect();
        DailyRegionalSeries::new(self.regions.clone(), weeks.first().monday(), n, values)
    }

    fn week_start_offset(&self, weeks: &WeekIndex, t: usize) -> Result<usize> {
        let week = weeks.iso(t);
        let monday = week.monday();
        match (self.day_offset(monday), self.day_offset(monday.add_days(6))) {
            (Some(o), Some(_)) => Ok(o),
            _ => Err(Error::validation(format!(
                "ISO week {week} is not fully covered by the daily series ({}..{}); the window must align to whole ISO weeks",
                self.start,
                self.end()
            ))),
        }
    }

    /// Weekly mean of `f(r, d)` over the seven days of each week, laid out `r * T + k`.
    pub(crate) fn weekly_mean<F: Fn(usize, usize) -> f64>(&self, weeks: &WeekIndex, f: F) -> Result<Vec<f64>> {
        let n_weeks = weeks.len();
        let offsets: Vec<usize> = (1..=n_weeks)
            .map(|t| self.week_start_offset(weeks, t))
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; self.regions.len() * n_weeks];
        for r in 0..self.regions.len() {
            for (k, &o) in offsets.iter().enumerate() {
                out[r * n_weeks + k] = (o..o + 7).map(|d| f(r, d)).sum::<f64>() / 7.0;
            }
        }
        Ok(out)
    }
}

/// Location and population of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_id: String,
    pub region: String,
    pub population: f64,
}

/// Daily gridded temperatures, one row of `n_days` values per cell id.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTemperatures {
    pub start: CivilDate,
    pub n_days: usize,
    pub cells: BTreeMap<String, Vec<f64>>,
}

/// Population-weighted regional mean of gridded daily temperatures.
pub fn population_weighted_series(grid: &GridTemperatures, cells: &[GridCell]) -> Result<DailyRegionalSeries> {
    let mut by_region: BTreeMap<&str, Vec<&GridCell>> = BTreeMap::new();
    for c in cells {
        if !grid.cells.contains_key(&c.cell_id) {
            continue;
        }
        if !c.population.is_finite() || c.population < 0.0 {
            return Err(Error::validation(format!("cell '{}' has invalid population", c.cell_id)));
        }
        by_region.entry(c.region.as_str()).or_default().push(c);
    }
    let mut regions = Vec::new();
    let mut values = Vec::new();
    for (region, members) in &by_region {
        let total: f64 = members.iter().map(|c| c.population).sum();
        if total <= 0.0 {
            return Err(Error::validation(format!(
                "region '{region}' has zero total population weight"
            )));
        }
        for d in 0..grid.n_days {
            let s: f64 = members
                .iter()
                .map(|c| c.population * grid.cells[&c.cell_id][d])
                .sum();
            values.push(s / total);
        }
        regions.push(region.to_string());
    }
    DailyRegionalSeries::new(regions, grid.start, grid.n_days, values)
}

/// Region-specific extreme-temperature thresholds and daily temperature baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureClimatology {
    pub regions: Vec<String>,
    pub hi_q: f64,
    pub lo_q: f64,
    pub hi_threshold: Vec<f64>,
    pub lo_threshold: Vec<f64>,
    /// 366 day-of-year slots per region; slot 366 repeats slot 365.
    pub baseline: Vec<Vec<f64>>,
}

impl TemperatureClimatology {
    /// Thresholds are type-7 quantiles of all days of the series; the
    /// baseline is the smoothed day-of-year mean.
    pub fn fit(series: &DailyRegionalSeries, hi_q: f64, lo_q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&hi_q) || !(0.0..=1.0).contains(&lo_q) || lo_q >= hi_q {
            return Err(Error::validation(format!(
                "temperature quantiles must satisfy 0 <= lo < hi <= 1, got lo={lo_q}, hi={hi_q}"
            )));
        }
        let n_regions = series.regions().len();
        let hi_threshold = (0..n_regions).map(|r| quantile(series.region(r), hi_q)).collect();
        let lo_threshold = (0..n_regions).map(|r| quantile(series.region(r), lo_q)).collect();
        Ok(TemperatureClimatology {
            regions: series.regions().to_vec(),
            hi_q,
            lo_q,
            hi_threshold,
            lo_threshold,
            baseline: temperature_baseline(series)?,
        })
    }

    fn check_regions(&self, series: &DailyRegionalSeries) -> Result<()> {
        if series.regions() != self.regions.as_slice() {
            return Err(Error::validation(
                "temperature series regions differ from the calibration regions",
            ));
        }
        Ok(())
    }

    pub fn baseline_at(&self, r: usize, date: CivilDate) -> f64 {
        self.baseline[r][date.day_of_year() as usize - 1]
    }
}

/// Per-region day-of-year mean over all years of the series, smoothed by a
/// centered 31-day circular moving average. Day 366 borrows day 365.
pub fn temperature_baseline(series: &DailyRegionalSeries) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(series.regions().len());
    for r in 0..series.regions().len() {
        let mut sum = [0.0f64; 365];
        let mut count = [0usize; 365];
        for d in 0..series.n_days() {
            let doy = series.date(d).day_of_year() as usize;
            if doy <= 365 {
                sum[doy - 1] += series.value(r, d);
                count[doy - 1] += 1;
            }
        }
        if let Some(slot) = count.iter().position(|&c| c == 0) {
            return Err(Error::validation(format!(
                "temperature baseline needs every day of the year; day {} has no observation",
                slot + 1
            )));
        }
        let raw: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        let mut smooth: Vec<f64> = (0..365)
            .map(|i| (-15i64..=15).map(|o| raw[(i as i64 + o).rem_euclid(365) as usize]).sum::<f64>() / 31.0)
            .collect();
        smooth.push(smooth[364]);
        out.push(smooth);
    }
    Ok(out)
}

/// Weekly hot-day and cold-day indices (strict exceedance of the thresholds).
pub fn threshold_indices(
    series: &DailyRegionalSeries,
    clim: &TemperatureClimatology,
    weeks: &WeekIndex,
) -> Result<(Vec<f64>, Vec<f64>)> {
    clim.check_regions(series)?;
    let hi = series.weekly_mean(weeks, |r, d| f64::from(u8::from(series.value(r, d) > clim.hi_threshold[r])))?;
    let ci = series.weekly_mean(weeks, |r, d| f64::from(u8::from(series.value(r, d) < clim.lo_threshold[r])))?;
    Ok((hi, ci))
}

/// Weekly mean of daily deviations from the day-of-year baseline.
pub fn temperature_anomalies(
    series: &DailyRegionalSeries,
    clim: &TemperatureClimatology,
    weeks: &WeekIndex,
) -> Result<Vec<f64>> {
    clim.check_regions(series)?;
    series.weekly_mean(weeks, |r, d| series.value(r, d) - clim.baseline_at(r, series.date(d)))
}
