//! Readers for temperature, population-grid and weekly epidemic files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{DailyRegionalSeries, GridCell, GridTemperatures, WeeklyEntries};
use crate::error::{Error, Result};
use crate::panel::io::{check_header, open_csv, read_records};
use crate::panel::{CivilDate, IsoWeek};

const GRID_HEADER: [&str; 6] = ["cell_id", "region", "latitude", "longitude", "date", "temperature"];
const REGIONAL_HEADER: [&str; 3] = ["region", "date", "temperature"];

/// Optional `# pathway: <name>` line at the top of a temperature file.
pub fn read_pathway_name(path: &Path) -> Result<Option<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    Ok(first
        .trim()
        .strip_prefix('#')
        .and_then(|rest| rest.trim().strip_prefix("pathway"))
        .map(|rest| rest.trim_start_matches([':', '=', ' ']).trim().to_string())
        .filter(|s| !s.is_empty()))
}

pub fn read_grid_population(path: &Path) -> Result<Vec<GridCell>> {
    read_records(path, &["cell_id", "region", "population"])
}

/// Reads a daily temperature file in either the gridded schema (requires
/// the population grid for weighting) or the regional schema.
pub fn read_daily_temperature(path: &Path, population: Option<&[GridCell]>) -> Result<DailyRegionalSeries> {
    let mut reader = open_csv(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header == GRID_HEADER {
        let cells = population.ok_or_else(|| {
            Error::validation(format!(
                "{} is a gridded temperature file; a population grid is required",
                path.display()
            ))
        })?;
        let grid = read_grid_temperature(path, cells)?;
        super::population_weighted_series(&grid, cells)
    } else if header == REGIONAL_HEADER {
        read_regional_temperature(path)
    } else {
        Err(Error::format(
            path,
            format!(
                "expected header '{}' or '{}'",
                GRID_HEADER.join(","),
                REGIONAL_HEADER.join(",")
            ),
        ))
    }
}

fn parse_date(path: &Path, row: usize, s: &str) -> Result<CivilDate> {
    s.parse()
        .map_err(|e: Error| Error::format(path, format!("row {row}: {e}")))
}

/// Collects `(key, date) -> value` rows into contiguous per-key day vectors.
fn to_contiguous(
    path: &Path,
    rows: BTreeMap<(String, CivilDate), f64>,
) -> Result<(CivilDate, usize, BTreeMap<String, Vec<f64>>)> {
    let start = rows.keys().map(|k| k.1).min().ok_or_else(|| Error::format(path, "no rows"))?;
    let end = rows.keys().map(|k| k.1).max().expect("non-empty");
    let n_days = (end.days() - start.days() + 1) as usize;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((key, date), v) in &rows {
        out.entry(key.clone()).or_insert_with(|| vec![f64::NAN; n_days])[(date.days() - start.days()) as usize] = *v;
    }
    for (key, vals) in &out {
        if let Some(d) = vals.iter().position(|v| v.is_nan()) {
            return Err(Error::format(
                path,
                format!("'{key}' has no value on {}", start.add_days(d as i64)),
            ));
        }
    }
    Ok((start, n_days, out))
}

fn read_grid_temperature(path: &Path, cells: &[GridCell]) -> Result<GridTemperatures> {
    let region_of: BTreeMap<&str, &str> = cells.iter().map(|c| (c.cell_id.as_str(), c.region.as_str())).collect();
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &GRID_HEADER)?;
    let mut rows = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        let (cell, region) = (&rec[0], &rec[1]);
        match region_of.get(cell) {
            Some(r) if *r == region => {}
            Some(r) => {
                return Err(Error::validation(format!(
                    "row {row}: cell '{cell}' is in region '{region}' but the population grid says '{r}'"
                )))
            }
            None => {
                return Err(Error::validation(format!(
                    "row {row}: cell '{cell}' is missing from the population grid"
                )))
            }
        }
        let date = parse_date(path, row, &rec[4])?;
        let t: f64 = rec[5]
            .parse()
            .map_err(|_| Error::format(path, format!("row {row}: invalid temperature '{}'", &rec[5])))?;
        if rows.insert((cell.to_string(), date), t).is_some() {
            return Err(Error::format(path, format!("row {row}: duplicate (cell, date)")));
        }
    }
    let (start, n_days, cells) = to_contiguous(path, rows)?;
    Ok(GridTemperatures { start, n_days, cells })
}

fn read_regional_temperature(path: &Path) -> Result<DailyRegionalSeries> {
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &REGIONAL_HEADER)?;
    let mut rows = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        let date = parse_date(path, row, &rec[1])?;
        let t: f64 = rec[2]
            .parse()
            .map_err(|_| Error::format(path, format!("row {row}: invalid temperature '{}'", &rec[2])))?;
        if rows.insert((rec[0].to_string(), date), t).is_some() {
            return Err(Error::format(path, format!("row {row}: duplicate (region, date)")));
        }
    }
    let (start, n_days, by_region) = to_contiguous(path, rows)?;
    let regions: Vec<String> = by_region.keys().cloned().collect();
    let values = by_region.into_values().flatten().collect();
    DailyRegionalSeries::new(regions, start, n_days, values)
}

/// Reads `region,iso_year,iso_week,<value_column>` rows, multiplying values by `scale`.
pub fn read_weekly_entries(path: &Path, value_column: &str, scale: f64) -> Result<WeeklyEntries> {
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &["region", "iso_year", "iso_week", value_column])?;
    let mut out = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        let bad = |what: &str| Error::format(path, format!("row {row}: invalid {what}"));
        let year: i32 = rec[1].parse().map_err(|_| bad("iso_year"))?;
        let week: u32 = rec[2].parse().map_err(|_| bad("iso_week"))?;
        let week = IsoWeek::new(year, week).map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        let v: f64 = rec[3].parse().map_err(|_| bad(value_column))?;
        if !v.is_finite() {
            return Err(bad(value_column));
        }
        if out.insert((rec[0].to_string(), week), v * scale).is_some() {
            return Err(Error::format(path, format!("row {row}: duplicate (region, week)")));
        }
    }
    Ok(out)
}

pub fn write_regional_temperature(series: &DailyRegionalSeries, path: &Path, pathway: Option<&str>) -> Result<()> {
    use std::io::Write;
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(p) = pathway {
        writeln!(file, "# pathway: {p}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(REGIONAL_HEADER).map_err(|e| Error::format(path, e.to_string()))?;
    for (r, region) in series.regions().iter().enumerate() {
        for d in 0..series.n_days() {
            w.write_record([region.clone(), series.date(d).to_string(), format!("{}", series.value(r, d))])
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_weekly_entries(entries: &WeeklyEntries, value_column: &str, scale: f64, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(["region", "iso_year", "iso_week", value_column])
        .map_err(|e| Error::format(path, e.to_string()))?;
    for ((region, week), v) in entries {
        w.write_record([region.clone(), week.year.to_string(), week.week.to_string(), format!("{}", v / scale)])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn gridded_file_with_pathway_line() {
        let dir = tempfile::tempdir().unwrap();
        let temp = dir.path().join("t.csv");
        let mut f = File::create(&temp).unwrap();
        writeln!(f, "# pathway: RCP4.5").unwrap();
        writeln!(f, "cell_id,region,latitude,longitude,date,temperature").unwrap();
        for (c, r, t) in [("c1", "R1", 10.0), ("c2", "R1", 20.0)] {
            for day in ["2020-01-01", "2020-01-02"] {
                writeln!(f, "{c},{r},45.0,2.0,{day},{t}").unwrap();
            }
        }
        drop(f);
        let pop = dir.path().join("p.csv");
        std::fs::write(&pop, "cell_id,region,population\nc1,R1,1\nc2,R1,3\n").unwrap();
        assert_eq!(read_pathway_name(&temp).unwrap().as_deref(), Some("RCP4.5"));
        let cells = read_grid_population(&pop).unwrap();
        let s = read_daily_temperature(&temp, Some(&cells)).unwrap();
        assert_eq!(s.n_days(), 2);
        assert!((s.value(0, 1) - 17.5).abs() < 1e-12);
        assert!(read_daily_temperature(&temp, None).is_err());
    }

    #[test]
    fn regional_round_trip_and_gap_detection() {
        let dir = tempfile::tempdir().unwrap();
        let s = DailyRegionalSeries::new(
            vec!["A".into(), "B".into()],
            CivilDate::from_ymd(2021, 3, 1).unwrap(),
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5],
        )
        .unwrap();
        let p = dir.path().join("r.csv");
        write_regional_temperature(&s, &p, Some("RCP2.6")).unwrap();
        assert_eq!(read_daily_temperature(&p, None).unwrap(), s);
        std::fs::write(&p, "region,date,temperature\nA,2021-03-01,1\nA,2021-03-03,2\n").unwrap();
        assert!(read_daily_temperature(&p, None).is_err());
    }

    #[test]
    fn weekly_entries_are_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ili.csv");
        std::fs::write(&p, "region,iso_year,iso_week,ili_per_100k\nA,2020,1,250\nA,2020,2,500\n").unwrap();
        let e = read_weekly_entries(&p, "ili_per_100k", 1e-3).unwrap();
        assert!((e[&("A".to_string(), IsoWeek::new(2020, 2).unwrap())] - 0.5).abs() < 1e-12);
        std::fs::write(&p, "region,iso_year,iso_week,ili_per_100k\nA,2020,1,250\nA,2020,1,500\n").unwrap();
        assert!(read_weekly_entries(&p, "ili_per_100k", 1e-3).is_err());
    }
}
