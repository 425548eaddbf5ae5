//! Region / age group / ISO week mortality panel.
//!
//! Holds death counts and person-week exposures on a complete
//! `(region, age group, week)` grid, the ISO week calendar and the region
//! adjacency graph used by the spatial penalties and priors.

mod calendar;
mod graph;
pub mod io;

pub use calendar::{days_in_month, is_leap_year, weeks_in_iso_year, CivilDate, IsoWeek, WeekIndex};
pub use graph::RegionGraph;
pub use io::{load_panel, read_adjacency, read_deaths, read_population, write_deaths_csv, DeathRecord};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average number of weeks in a year, used for exposures and the seasonal basis.
pub const WEEKS_PER_YEAR: f64 = 52.18;

/// Population counts on January 1, keyed by `(region, age group, year)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationTable {
    entries: BTreeMap<(String, String, i32), f64>,
}

impl PopulationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, region: &str, age_group: &str, year: i32, population: f64) -> Option<f64> {
        self.entries
            .insert((region.to_string(), age_group.to_string(), year), population)
    }

    pub fn get(&self, region: &str, age_group: &str, year: i32) -> Option<f64> {
        self.entries
            .get(&(region.to_string(), age_group.to_string(), year))
            .copied()
    }

    pub fn regions(&self) -> Vec<String> {
        let mut r: Vec<String> = self.entries.keys().map(|k| k.0.clone()).collect();
        r.dedup();
        r.sort();
        r.dedup();
        r
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Weekly exposure `(P_y + P_{y+1}) / (2 · 52.18)` from January-1 populations.
pub fn weekly_exposure(pop_year: f64, pop_next_year: f64) -> f64 {
    (pop_year + pop_next_year) / (2.0 * WEEKS_PER_YEAR)
}

/// Exposure-to-risk in person-weeks for every `(region, age, week)` cell,
/// laid out like [`MortalityPanel`] cells. Constant within an ISO year.
pub fn build_exposures(
    population: &PopulationTable,
    regions: &[String],
    age_groups: &[String],
    weeks: &WeekIndex,
) -> Result<Vec<f64>> {
    let years = weeks.years();
    let mut by_year: BTreeMap<(usize, usize, i32), f64> = BTreeMap::new();
    for (r, region) in regions.iter().enumerate() {
        for (x, age) in age_groups.iter().enumerate() {
            for &y in &years {
                let lookup = |year: i32| {
                    population.get(region, age, year).ok_or_else(|| {
                        Error::validation(format!(
                            "missing population for region '{region}', age group '{age}', year {year}"
                        ))
                    })
                };
                by_year.insert((r, x, y), weekly_exposure(lookup(y)?, lookup(y + 1)?));
            }
        }
    }
    let n_weeks = weeks.len();
    let mut out = vec![0.0; regions.len() * age_groups.len() * n_weeks];
    for r in 0..regions.len() {
        for x in 0..age_groups.len() {
            for k in 0..n_weeks {
                out[(r * age_groups.len() + x) * n_weeks + k] = by_year[&(r, x, weeks.y(k + 1))];
            }
        }
    }
    Ok(out)
}

/// Complete grid of death counts and exposures.
///
/// Cells are addressed by 0-based `(region, age, week offset)`; week offset
/// `k` corresponds to ordinal `t = k + 1` of the [`WeekIndex`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortalityPanel {
    regions: Vec<String>,
    age_groups: Vec<String>,
    weeks: WeekIndex,
    deaths: Vec<u32>,
    exposures: Vec<f64>,
    weight_mask: Vec<u8>,
}

impl MortalityPanel {
    pub fn new(
        regions: Vec<String>,
        age_groups: Vec<String>,
        weeks: WeekIndex,
        deaths: Vec<u32>,
        exposures: Vec<f64>,
    ) -> Result<Self> {
        let n = regions.len() * age_groups.len() * weeks.len();
        if regions.is_empty() || age_groups.is_empty() || weeks.is_empty() {
            return Err(Error::validation("panel needs at least one region, age group and week"));
        }
        if deaths.len() != n || exposures.len() != n {
            return Err(Error::validation(format!(
                "panel grid has {n} cells but got {} death counts and {} exposures",
                deaths.len(),
                exposures.len()
            )));
        }
        if let Some(i) = exposures.iter().position(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::validation(format!(
                "exposure {} at cell {i} is negative or non-finite",
                exposures[i]
            )));
        }
        let weight_mask = vec![1u8; weeks.len()];
        Ok(MortalityPanel {
            regions,
            age_groups,
            weeks,
            deaths,
            exposures,
            weight_mask,
        })
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn age_groups(&self) -> &[String] {
        &self.age_groups
    }

    pub fn weeks(&self) -> &WeekIndex {
        &self.weeks
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_ages(&self) -> usize {
        self.age_groups.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn n_cells(&self) -> usize {
        self.deaths.len()
    }

    #[inline]
    pub fn cell(&self, r: usize, x: usize, k: usize) -> usize {
        (r * self.age_groups.len() + x) * self.weeks.len() + k
    }

    #[inline]
    pub fn deaths(&self, r: usize, x: usize, k: usize) -> u32 {
        self.deaths[self.cell(r, x, k)]
    }

    #[inline]
    pub fn exposure(&self, r: usize, x: usize, k: usize) -> f64 {
        self.exposures[self.cell(r, x, k)]
    }

    pub fn deaths_slice(&self) -> &[u32] {
        &self.deaths
    }

    pub fn exposures_slice(&self) -> &[f64] {
        &self.exposures
    }

    /// Per-week inclusion flags for baseline fitting.
    pub fn weight_mask(&self) -> &[u8] {
        &self.weight_mask
    }

    pub fn weight(&self, k: usize) -> f64 {
        f64::from(self.weight_mask[k])
    }

    /// Number of unmasked `(r, x, t)` cells.
    pub fn n_unmasked_cells(&self) -> usize {
        let active = self.weight_mask.iter().filter(|&&m| m == 1).count();
        active * self.regions.len() * self.age_groups.len()
    }

    /// Returns a copy with the listed ISO weeks excluded from baseline fitting.
    pub fn mask_weeks(&self, weeks: &[IsoWeek]) -> Result<Self> {
        let mut out = self.clone();
        for &w in weeks {
            let t = self.weeks.t_of(w).ok_or_else(|| {
                Error::validation(format!(
                    "masked week {w} lies outside the panel window {}..{}",
                    self.weeks.first(),
                    self.weeks.last()
                ))
            })?;
            out.weight_mask[t - 1] = 0;
        }
        Ok(out)
    }

    /// Replaces the death counts (same grid), keeping exposures and mask.
    pub fn with_deaths(&self, deaths: Vec<u32>) -> Result<Self> {
        if deaths.len() != self.deaths.len() {
            return Err(Error::validation("replacement deaths do not match the panel grid"));
        }
        let mut out = self.clone();
        out.deaths = deaths;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_panel() -> MortalityPanel {
        let weeks = WeekIndex::build((2020, 10), (2020, 20)).unwrap();
        let n = 2 * 2 * weeks.len();
        MortalityPanel::new(
            vec!["A".into(), "B".into()],
            vec!["65-69".into(), "70-74".into()],
            weeks,
            (0..n as u32).collect(),
            vec![10.0; n],
        )
        .unwrap()
    }

    #[test]
    fn exposure_examples() {
        assert!((weekly_exposure(104.36, 104.36) - 2.0).abs() < 1e-12);
        assert!((weekly_exposure(1000.0, 1200.0) - 2200.0 / 104.36).abs() < 1e-12);
        assert!((weekly_exposure(1000.0, 1200.0) - 21.0809).abs() < 1e-4);
        assert_eq!(weekly_exposure(0.0, 0.0), 0.0);
    }

    #[test]
    fn exposures_constant_within_year_and_missing_year_reported() {
        let weeks = WeekIndex::build((2019, 50), (2020, 3)).unwrap();
        let mut pop = PopulationTable::new();
        pop.insert("A", "90+", 2019, 1000.0);
        pop.insert("A", "90+", 2020, 1200.0);
        let err = build_exposures(&pop, &["A".into()], &["90+".into()], &weeks).unwrap_err();
        assert!(err.to_string().contains("2021"), "{err}");
        pop.insert("A", "90+", 2021, 1300.0);
        let e = build_exposures(&pop, &["A".into()], &["90+".into()], &weeks).unwrap();
        assert_eq!(e.len(), 6);
        assert_eq!(e[0], e[2]);
        assert!((e[0] - 2200.0 / 104.36).abs() < 1e-12);
        assert!((e[3] - 2500.0 / 104.36).abs() < 1e-12);
    }

    #[test]
    fn masking() {
        let p = small_panel();
        let same = p.mask_weeks(&[]).unwrap();
        assert_eq!(same, p);
        let masked = p
            .mask_weeks(&[IsoWeek::new(2020, 12).unwrap(), IsoWeek::new(2020, 16).unwrap()])
            .unwrap();
        assert_eq!(masked.weight_mask().iter().filter(|&&m| m == 0).count(), 2);
        assert_eq!(masked.weight(2), 0.0);
        assert_eq!(masked.deaths_slice(), p.deaths_slice());
        assert!(p.mask_weeks(&[IsoWeek::new(2021, 1).unwrap()]).is_err());
    }

    #[test]
    fn rejects_bad_grids() {
        let weeks = WeekIndex::build((2020, 1), (2020, 2)).unwrap();
        assert!(MortalityPanel::new(vec!["A".into()], vec!["x".into()], weeks.clone(), vec![1], vec![1.0, 1.0]).is_err());
        assert!(MortalityPanel::new(vec!["A".into()], vec!["x".into()], weeks, vec![1, 1], vec![1.0, -1.0]).is_err());
    }
}
