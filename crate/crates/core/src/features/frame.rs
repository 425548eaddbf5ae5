use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{IsoWeek, WeekIndex};
use crate::stats::quantile;

/// Per (region, week) covariate columns, each laid out `values[r * T + k]`.
/// Unavailable cells (lags reaching before the data) are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    regions: Vec<String>,
    weeks: WeekIndex,
    columns: Vec<(String, Vec<f64>)>,
    /// Hinge thresholds per derived hinge column and region.
    pub hinges: BTreeMap<String, Vec<f64>>,
}

impl FeatureFrame {
    pub fn new(regions: Vec<String>, weeks: WeekIndex) -> Self {
        FeatureFrame {
            regions,
            weeks,
            columns: Vec::new(),
            hinges: BTreeMap::new(),
        }
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn weeks(&self) -> &WeekIndex {
        &self.weeks
    }

    pub fn n_cells(&self) -> usize {
        self.regions.len() * self.weeks.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn has(&self, name: &str) -> bool {
        self.columns.iter().any(|(n, _)| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name).ok_or_else(|| {
            Error::validation(format!(
                "covariate '{name}' is not in the feature frame (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn value(&self, name: &str, r: usize, k: usize) -> Option<f64> {
        self.column(name).map(|c| c[r * self.weeks.len() + k])
    }

    /// Adds or replaces a column.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_cells() {
            return Err(Error::validation(format!(
                "column '{name}' has {} values, frame has {} cells",
                values.len(),
                self.n_cells()
            )));
        }
        match self.columns.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = values,
            None => self.columns.push((name.to_string(), values)),
        }
        Ok(())
    }

    /// Restriction to a sub-window of consecutive weeks.
    pub fn slice(&self, window: &WeekIndex) -> Result<FeatureFrame> {
        let k0 = self.weeks.t_of(window.first()).ok_or_else(|| {
            Error::validation(format!(
                "week {} lies outside the feature frame ({}..{})",
                window.first(),
                self.weeks.first(),
                self.weeks.last()
            ))
        })? - 1;
        if k0 + window.len() > self.weeks.len() {
            return Err(Error::validation(format!(
                "week {} lies outside the feature frame ({}..{})",
                window.last(),
                self.weeks.first(),
                self.weeks.last()
            )));
        }
        let t = self.weeks.len();
        let mut out = FeatureFrame::new(self.regions.clone(), window.clone());
        out.hinges = self.hinges.clone();
        for (name, v) in &self.columns {
            let vals = (0..self.regions.len())
                .flat_map(|r| v[r * t + k0..r * t + k0 + window.len()].iter().copied())
                .collect();
            out.columns.push((name.clone(), vals));
        }
        Ok(out)
    }

    /// Concatenates two frames over adjacent windows with the same regions
    /// and columns.
    pub fn append(&self, next: &FeatureFrame) -> Result<FeatureFrame> {
        if self.regions != next.regions {
            return Err(Error::validation("cannot append frames with different regions"));
        }
        if self.weeks.last().succ() != next.weeks.first() {
            return Err(Error::validation(format!(
                "frames are not adjacent: {} is followed by {}",
                self.weeks.last(),
                next.weeks.first()
            )));
        }
        let weeks = WeekIndex::from_start(self.weeks.first(), self.weeks.len() + next.weeks.len());
        let mut out = FeatureFrame::new(self.regions.clone(), weeks);
        out.hinges = self.hinges.clone();
        let (t1, t2) = (self.weeks.len(), next.weeks.len());
        for (name, a) in &self.columns {
            let b = next.require(name)?;
            let vals = (0..self.regions.len())
                .flat_map(|r| a[r * t1..(r + 1) * t1].iter().chain(&b[r * t2..(r + 1) * t2]).copied())
                .collect();
            out.columns.push((name.clone(), vals));
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut header = vec!["region".to_string(), "iso_year".into(), "iso_week".into()];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
        let t = self.weeks.len();
        for (r, region) in self.regions.iter().enumerate() {
            for k in 0..t {
                let week = self.weeks.iso(k + 1);
                let mut row = vec![region.clone(), week.year.to_string(), week.week.to_string()];
                row.extend(self.columns.iter().map(|(_, v)| format_value(v[r * t + k])));
                w.write_record(&row).map_err(|e| Error::format(path, e.to_string()))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a frame written by [`FeatureFrame::write_csv`]. Rows must form a
    /// complete grid of consecutive weeks.
    pub fn read_csv(path: &Path) -> Result<FeatureFrame> {
        let mut reader = crate::panel::io::open_csv(path)?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::format(path, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < 3 || header[..3] != ["region", "iso_year", "iso_week"] {
            return Err(Error::format(path, "expected header starting 'region,iso_year,iso_week'"));
        }
        let names = &header[3..];
        let mut rows: BTreeMap<(String, IsoWeek), Vec<f64>> = BTreeMap::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
            if rec.len() != header.len() {
                return Err(Error::format(path, format!("row {row}: expected {} fields", header.len())));
            }
            let parse_err = |what: &str| Error::format(path, format!("row {row}: invalid {what}"));
            let year: i32 = rec[1].parse().map_err(|_| parse_err("iso_year"))?;
            let wk: u32 = rec[2].parse().map_err(|_| parse_err("iso_week"))?;
            let week = IsoWeek::new(year, wk).map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
            let vals = (3..rec.len())
                .map(|j| parse_value(&rec[j]).ok_or_else(|| parse_err(&header[j])))
                .collect::<Result<Vec<f64>>>()?;
            if rows.insert((rec[0].to_string(), week), vals).is_some() {
                return Err(Error::format(path, format!("row {row}: duplicate (region, week)")));
            }
        }
        let mut regions: Vec<String> = rows.keys().map(|(r, _)| r.clone()).collect();
        regions.dedup();
        let first = rows.keys().map(|(_, w)| *w).min().ok_or_else(|| Error::format(path, "no rows"))?;
        let last = rows.keys().map(|(_, w)| *w).max().expect("non-empty");
        let weeks = WeekIndex::build((first.year, first.week), (last.year, last.week))?;
        let mut frame = FeatureFrame::new(regions.clone(), weeks.clone());
        for (j, name) in names.iter().enumerate() {
            let mut col = Vec::with_capacity(frame.n_cells());
            for region in &regions {
                for week in weeks.iter() {
                    let v = rows.get(&(region.clone(), week)).ok_or_else(|| {
                        Error::format(path, format!("missing row for region '{region}', week {week}"))
                    })?;
                    col.push(v[j]);
                }
            }
            frame.set_column(name, col)?;
        }
        Ok(frame)
    }
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_value(s: &str) -> Option<f64> {
    if s == "NA" || s.is_empty() {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}

/// A derived column name decomposed: parent base column, averaged lags and
/// optional hinge quantile, e.g. `IA_avg01_hinge75`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub base: String,
    pub lags: Vec<usize>,
    pub hinge: Option<f64>,
}

impl ColumnSpec {
    pub fn parse(name: &str) -> Result<ColumnSpec> {
        let bad = || Error::validation(format!("cannot interpret covariate name '{name}'"));
        let mut parts = name.split('_');
        let base = parts.next().filter(|b| !b.is_empty()).ok_or_else(bad)?.to_string();
        let mut lags = vec![0];
        let mut hinge = None;
        for part in parts {
            if let Some(l) = part.strip_prefix("lag") {
                lags = vec![l.parse().map_err(|_| bad())?];
            } else if let Some(digits) = part.strip_prefix("avg") {
                if digits.is_empty() {
                    return Err(bad());
                }
                lags = digits
                    .chars()
                    .map(|c| c.to_digit(10).map(|d| d as usize).ok_or_else(bad))
                    .collect::<Result<_>>()?;
            } else if let Some(q) = part.strip_prefix("hinge") {
                let q: u32 = q.parse().map_err(|_| bad())?;
                if q == 0 || q >= 100 {
                    return Err(bad());
                }
                hinge = Some(f64::from(q) / 100.0);
            } else {
                return Err(bad());
            }
        }
        Ok(ColumnSpec { base, lags, hinge })
    }

    /// Name of the column before the hinge is applied.
    pub fn parent_name(&self) -> String {
        match self.lags.as_slice() {
            [0] => self.base.clone(),
            [l] => format!("{}_lag{l}", self.base),
            ls => format!(
                "{}_avg{}",
                self.base,
                ls.iter().map(|l| l.to_string()).collect::<String>()
            ),
        }
    }

    pub fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0)
    }
}

/// `out(r, t) = mean over ℓ ∈ lags of column(r, t − ℓ)`; NaN where history is missing.
pub fn lag_average(column: &[f64], n_regions: usize, n_weeks: usize, lags: &[usize]) -> Vec<f64> {
    let mut out = vec![f64::NAN; n_regions * n_weeks];
    for r in 0..n_regions {
        for k in 0..n_weeks {
            if lags.iter().all(|&l| l <= k) {
                let s: f64 = lags.iter().map(|&l| column[r * n_weeks + k - l]).sum();
                out[r * n_weeks + k] = s / lags.len() as f64;
            }
        }
    }
    out
}

/// Per-region type-7 quantile over the non-missing values of a column.
pub fn hinge_thresholds(column: &[f64], n_regions: usize, q: f64) -> Result<Vec<f64>> {
    let n_weeks = column.len() / n_regions;
    (0..n_regions)
        .map(|r| {
            let vals: Vec<f64> = column[r * n_weeks..(r + 1) * n_weeks]
                .iter()
                .copied()
                .filter(|v| !v.is_nan())
                .collect();
            if vals.len() < 4 {
                return Err(Error::validation(format!(
                    "hinge threshold needs at least 4 values per region, region {r} has {}",
                    vals.len()
                )));
            }
            Ok(quantile(&vals, q))
        })
        .collect()
}

/// `max(value − threshold_r, 0)`, NaN preserved.
pub fn apply_hinge(column: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let n_weeks = column.len() / thresholds.len();
    column
        .iter()
        .enumerate()
        .map(|(i, &v)| if v.is_nan() { v } else { (v - thresholds[i / n_weeks]).max(0.0) })
        .collect()
}

/// Evaluates derived columns over `window` from a base frame that holds the
/// parent columns over `window` plus any earlier history. Hinge thresholds
/// come from `frozen` when given, otherwise from the window values.
pub fn derive_columns(
    base: &FeatureFrame,
    window: &WeekIndex,
    names: &[String],
    frozen: Option<&BTreeMap<String, Vec<f64>>>,
) -> Result<FeatureFrame> {
    let n_regions = base.regions().len();
    let t_all = base.weeks().len();
    let mut extended = FeatureFrame::new(base.regions().to_vec(), base.weeks().clone());
    let mut hinges = BTreeMap::new();
    for name in names {
        let spec = ColumnSpec::parse(name)?;
        let parent = base.require(&spec.base)?;
        let mut col = lag_average(parent, n_regions, t_all, &spec.lags);
        if let Some(q) = spec.hinge {
            let thr = match frozen.and_then(|f| f.get(name)) {
                Some(t) => t.clone(),
                None => {
                    let mut tmp = FeatureFrame::new(base.regions().to_vec(), base.weeks().clone());
                    tmp.set_column("x", col.clone())?;
                    hinge_thresholds(tmp.slice(window)?.require("x")?, n_regions, q)?
                }
            };
            col = apply_hinge(&col, &thr);
            hinges.insert(name.clone(), thr);
        }
        extended.set_column(name, col)?;
    }
    let mut out = extended.slice(window)?;
    out.hinges = hinges;
    Ok(out)
}

/// Location/scale pair for one standardized column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub scale: f64,
}

/// Column scalers fitted on the calibration window and reused for forecasts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub scalers: BTreeMap<String, Scaler>,
}

impl Standardizer {
    /// Mean and population standard deviation over available values; a
    /// constant column keeps scale 1.
    pub fn fit(frame: &FeatureFrame, names: &[String]) -> Result<Self> {
        let mut scalers = BTreeMap::new();
        for name in names {
            let vals: Vec<f64> = frame.require(name)?.iter().copied().filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                return Err(Error::validation(format!("column '{name}' has no available values")));
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            let scale = if sd > 1e-12 { sd } else { 1.0 };
            scalers.insert(name.clone(), Scaler { mean, scale });
        }
        Ok(Standardizer { scalers })
    }

    pub fn apply(&self, name: &str, v: f64) -> f64 {
        match self.scalers.get(name) {
            Some(s) => (v - s.mean) / s.scale,
            None => v,
        }
    }

    pub fn invert(&self, name: &str, v: f64) -> f64 {
        match self.scalers.get(name) {
            Some(s) => v * s.scale + s.mean,
            None => v,
        }
    }
}
