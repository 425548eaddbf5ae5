//! Delimited-text readers and writers for the panel inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_exposures, IsoWeek, MortalityPanel, PopulationTable, RegionGraph, WeekIndex};
use crate::error::{Error, Result};

/// One row of the deaths file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeathRecord {
    pub region: String,
    pub age_group: String,
    pub iso_year: i32,
    pub iso_week: u32,
    pub deaths: i64,
}

#[derive(Debug, Deserialize)]
struct PopulationRecord {
    region: String,
    age_group: String,
    year: i32,
    population: f64,
}

#[derive(Debug, Deserialize)]
struct EdgeRecord {
    region_a: String,
    region_b: String,
}

pub(crate) fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

pub(crate) fn check_header(path: &Path, reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::format(
            path,
            format!("expected header '{}', found '{}'", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

pub(crate) fn read_records<T: for<'de> Deserialize<'de>>(path: &Path, expected: &[&str]) -> Result<Vec<T>> {
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, expected)?;
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<T>().enumerate() {
        // header is line 1
        out.push(rec.map_err(|e| Error::format(path, format!("row {}: {e}", i + 2)))?);
    }
    Ok(out)
}

pub fn read_deaths(path: &Path) -> Result<Vec<DeathRecord>> {
    read_records(path, &["region", "age_group", "iso_year", "iso_week", "deaths"])
}

pub fn read_population(path: &Path) -> Result<PopulationTable> {
    let rows: Vec<PopulationRecord> = read_records(path, &["region", "age_group", "year", "population"])?;
    let mut table = PopulationTable::new();
    for (i, row) in rows.into_iter().enumerate() {
        if !row.population.is_finite() || row.population < 0.0 {
            return Err(Error::format(path, format!("row {}: invalid population {}", i + 2, row.population)));
        }
        if table.insert(&row.region, &row.age_group, row.year, row.population).is_some() {
            return Err(Error::format(
                path,
                format!("row {}: duplicate population for ({}, {}, {})", i + 2, row.region, row.age_group, row.year),
            ));
        }
    }
    Ok(table)
}

/// Reads undirected edges; returns the edge list.
pub fn read_adjacency(path: &Path) -> Result<Vec<(String, String)>> {
    let rows: Vec<EdgeRecord> = read_records(path, &["region_a", "region_b"])?;
    Ok(rows.into_iter().map(|e| (e.region_a, e.region_b)).collect())
}

/// Assembles a validated panel from parsed records. Rows outside the week
/// window are ignored so that one deaths file can serve several windows.
pub fn panel_from_records(
    records: &[DeathRecord],
    population: &PopulationTable,
    graph: &RegionGraph,
    weeks: &WeekIndex,
) -> Result<MortalityPanel> {
    let regions: BTreeSet<&str> = records.iter().map(|r| r.region.as_str()).collect();
    let graph_regions: BTreeSet<&str> = graph.regions().iter().map(String::as_str).collect();
    if regions != graph_regions {
        let missing: Vec<_> = graph_regions.symmetric_difference(&regions).collect();
        return Err(Error::validation(format!(
            "regions in deaths and adjacency files differ: {missing:?}"
        )));
    }
    let pop_regions = population.regions();
    let pop_set: BTreeSet<&str> = pop_regions.iter().map(String::as_str).collect();
    if pop_set != regions {
        let missing: Vec<_> = pop_set.symmetric_difference(&regions).collect();
        return Err(Error::validation(format!(
            "regions in deaths and population files differ: {missing:?}"
        )));
    }
    let ages: Vec<String> = records
        .iter()
        .map(|r| r.age_group.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let regions: Vec<String> = graph.regions().to_vec();
    let age_pos: BTreeMap<&str, usize> = ages.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();

    let n_weeks = weeks.len();
    let n = regions.len() * ages.len() * n_weeks;
    let mut deaths: Vec<Option<u32>> = vec![None; n];
    for (i, rec) in records.iter().enumerate() {
        let row = i + 2;
        let week = IsoWeek::new(rec.iso_year, rec.iso_week)
            .map_err(|e| Error::validation(format!("deaths row {row}: {e}")))?;
        let Some(t) = weeks.t_of(week) else { continue };
        if rec.deaths < 0 {
            return Err(Error::validation(format!(
                "deaths row {row}: negative death count {} for ({}, {}, {week})",
                rec.deaths, rec.region, rec.age_group
            )));
        }
        let r = graph.index_of(&rec.region).expect("region set checked");
        let x = age_pos[rec.age_group.as_str()];
        let cell = (r * ages.len() + x) * n_weeks + (t - 1);
        if deaths[cell].is_some() {
            return Err(Error::validation(format!(
                "deaths row {row}: duplicate cell ({}, {}, {week})",
                rec.region, rec.age_group
            )));
        }
        deaths[cell] = Some(u32::try_from(rec.deaths).map_err(|_| {
            Error::validation(format!("deaths row {row}: count {} too large", rec.deaths))
        })?);
    }
    if let Some(cell) = deaths.iter().position(Option::is_none) {
        let k = cell % n_weeks;
        let x = (cell / n_weeks) % ages.len();
        let r = cell / (n_weeks * ages.len());
        return Err(Error::validation(format!(
            "deaths file has no row for ({}, {}, {})",
            regions[r],
            ages[x],
            weeks.iso(k + 1)
        )));
    }
    let deaths: Vec<u32> = deaths.into_iter().map(Option::unwrap).collect();
    let exposures = build_exposures(population, &regions, &ages, weeks)?;
    MortalityPanel::new(regions, ages, weeks.clone(), deaths, exposures)
}

/// Loads and validates the deaths, population and adjacency files.
pub fn load_panel(
    deaths: &Path,
    population: &Path,
    adjacency: &Path,
    weeks: &WeekIndex,
) -> Result<(MortalityPanel, RegionGraph)> {
    let records = read_deaths(deaths)?;
    let pop = read_population(population)?;
    let edges = read_adjacency(adjacency)?;
    let regions: Vec<String> = records
        .iter()
        .map(|r| r.region.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let graph = RegionGraph::new(&regions, &edges)?;
    let panel = panel_from_records(&records, &pop, &graph, weeks)?;
    Ok((panel, graph))
}

/// Writes the panel's death counts in the deaths-file schema.
pub fn write_deaths_csv(panel: &MortalityPanel, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in 0..panel.n_regions() {
        for x in 0..panel.n_ages() {
            for k in 0..panel.n_weeks() {
                let week = panel.weeks().iso(k + 1);
                w.serialize(DeathRecord {
                    region: panel.regions()[r].clone(),
                    age_group: panel.age_groups()[x].clone(),
                    iso_year: week.year,
                    iso_week: week.week,
                    deaths: i64::from(panel.deaths(r, x, k)),
                })
                .map_err(|e| Error::format(path, e.to_string()))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_population_csv(population: &PopulationTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(["region", "age_group", "year", "population"])
        .map_err(|e| Error::format(path, e.to_string()))?;
    for ((region, age, year), pop) in &population.entries {
        w.write_record([region.clone(), age.clone(), year.to_string(), pop.to_string()])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_adjacency_csv(graph: &RegionGraph, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(["region_a", "region_b"])
        .map_err(|e| Error::format(path, e.to_string()))?;
    for (i, j) in graph.edges() {
        w.write_record([&graph.regions()[i], &graph.regions()[j]])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
