use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{IsoWeek, WeekIndex};

use super::Toggles;

/// Reporting scale of a band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "deaths")]
    Deaths,
    /// Deaths per 1,000 person-years: `d / E_week · 1000`, where the weekly
    /// exposure `E_week` is a population divided by 52.18.
    #[serde(rename = "rate_per_1000py")]
    Rate,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Deaths => "deaths",
            Metric::Rate => "rate_per_1000py",
        })
    }
}

/// 2.5%, 50% and 97.5% bootstrap quantiles of deaths per cell, laid out
/// `(r * X + x) * T + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBands {
    pub regions: Vec<String>,
    pub age_groups: Vec<String>,
    pub weeks: WeekIndex,
    pub samples: usize,
    pub seed: u64,
    pub toggles: Toggles,
    pub exposures: Vec<f64>,
    pub q025: Vec<f64>,
    pub q50: Vec<f64>,
    pub q975: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BandRow {
    region: String,
    age_group: String,
    iso_year: i32,
    iso_week: u32,
    q025: f64,
    q50: f64,
    q975: f64,
    metric: Metric,
}

impl PredictionBands {
    pub fn n_cells(&self) -> usize {
        self.q50.len()
    }

    pub fn cell(&self, r: usize, x: usize, k: usize) -> usize {
        (r * self.age_groups.len() + x) * self.weeks.len() + k
    }

    /// `(q2.5, q50, q97.5)` of cell `cell` on the requested scale.
    pub fn quantiles(&self, cell: usize, metric: Metric) -> [f64; 3] {
        let f = match metric {
            Metric::Deaths => 1.0,
            Metric::Rate => 1000.0 / self.exposures[cell],
        };
        [self.q025[cell] * f, self.q50[cell] * f, self.q975[cell] * f]
    }

    /// Writes both metrics, deaths first, one row per cell and metric.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for metric in [Metric::Deaths, Metric::Rate] {
            for (r, region) in self.regions.iter().enumerate() {
                for (x, age) in self.age_groups.iter().enumerate() {
                    for (k, week) in self.weeks.iter().enumerate() {
                        let [q025, q50, q975] = self.quantiles(self.cell(r, x, k), metric);
                        w.serialize(BandRow {
                            region: region.clone(),
                            age_group: age.clone(),
                            iso_year: week.year,
                            iso_week: week.week,
                            q025,
                            q50,
                            q975,
                            metric,
                        })
                        .map_err(|e| Error::format(path, e.to_string()))?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a bands file back. Sample count and seed are not part of the
    /// table and come back as zero; exposures are recovered from the ratio
    /// of the two metrics (one when a cell has no rate row).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut rows: BTreeMap<(Metric, String, String, IsoWeek), [f64; 3]> = BTreeMap::new();
        let (mut regions, mut ages, mut weeks) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rd.deserialize() {
            let row: BandRow = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let week = IsoWeek::new(row.iso_year, row.iso_week)?;
            if !regions.contains(&row.region) {
                regions.push(row.region.clone());
            }
            if !ages.contains(&row.age_group) {
                ages.push(row.age_group.clone());
            }
            if !weeks.contains(&week) {
                weeks.push(week);
            }
            rows.insert((row.metric, row.region, row.age_group, week), [row.q025, row.q50, row.q975]);
        }
        if rows.is_empty() {
            return Ok(PredictionBands {
                regions,
                age_groups: ages,
                weeks: WeekIndex::from_start(IsoWeek { year: 2000, week: 1 }, 0),
                samples: 0,
                seed: 0,
                toggles: Toggles::none(),
                exposures: Vec::new(),
                q025: Vec::new(),
                q50: Vec::new(),
                q975: Vec::new(),
            });
        }
        weeks.sort();
        let index = WeekIndex::from_start(weeks[0], weeks.len());
        if index.iter().ne(weeks.iter().copied()) {
            return Err(Error::format(path, "band weeks are not consecutive"));
        }
        let n = regions.len() * ages.len() * weeks.len();
        let (mut q025, mut q50, mut q975, mut exposures) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![1.0; n]);
        let mut cell = 0;
        for r in &regions {
            for a in &ages {
                for w in &weeks {
                    let key = |m| (m, r.clone(), a.clone(), *w);
                    let d = rows
                        .get(&key(Metric::Deaths))
                        .ok_or_else(|| Error::format(path, format!("no deaths row for {r}, {a}, {w}")))?;
                    [q025[cell], q50[cell], q975[cell]] = *d;
                    if let Some(rate) = rows.get(&key(Metric::Rate)) {
                        if rate[1] > 0.0 {
                            exposures[cell] = 1000.0 * d[1] / rate[1];
                        }
                    }
                    cell += 1;
                }
            }
        }
        Ok(PredictionBands {
            regions,
            age_groups: ages,
            weeks: index,
            samples: 0,
            seed: 0,
            toggles: Toggles::none(),
            exposures,
            q025,
            q50,
            q975,
        })
    }
}

/// Fraction of cells whose observed value lies inside `[q2.5, q97.5]`.
pub fn coverage_check(bands: &PredictionBands, observed: &[f64]) -> Result<f64> {
    if observed.len() != bands.n_cells() {
        return Err(Error::validation(format!(
            "{} observations for {} band cells",
            observed.len(),
            bands.n_cells()
        )));
    }
    if observed.is_empty() {
        return Err(Error::validation("no cells to check"));
    }
    let inside = observed
        .iter()
        .enumerate()
        .filter(|(c, &v)| bands.q025[*c] <= v && v <= bands.q975[*c])
        .count();
    Ok(inside as f64 / observed.len() as f64)
}

/// Relative excess of the median scenario rate over the baseline rate, summed
/// over the horizon, for one region and age group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessDeaths {
    pub region: String,
    pub age_group: String,
    pub relative: f64,
}

/// `(Σ_t q50 rate − Σ_t baseline rate) / Σ_t baseline rate` per region and
/// age group; `baseline` holds projected baseline deaths in the band layout.
pub fn excess_deaths(bands: &PredictionBands, baseline: &[f64]) -> Result<Vec<ExcessDeaths>> {
    if baseline.len() != bands.n_cells() {
        return Err(Error::validation("baseline projection and scenario bands cover different cells"));
    }
    let n_t = bands.weeks.len();
    let mut out = Vec::new();
    for (r, region) in bands.regions.iter().enumerate() {
        for (x, age) in bands.age_groups.iter().enumerate() {
            let (mut scen, mut base) = (0.0, 0.0);
            for k in 0..n_t {
                let c = bands.cell(r, x, k);
                let e = bands.exposures[c];
                scen += bands.q50[c] * 1000.0 / e;
                base += baseline[c] * 1000.0 / e;
            }
            if base == 0.0 {
                return Err(Error::numerical(format!("baseline rate sums to zero for {region}, {age}")));
            }
            out.push(ExcessDeaths { region: region.clone(), age_group: age.clone(), relative: (scen - base) / base });
        }
    }
    Ok(out)
}
