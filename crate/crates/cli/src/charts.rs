//! Static SVG line charts, one per region and age group: observed deaths,
//! the baseline, the best estimate and the 95% bootstrap band. Output is a
//! pure function of the inputs, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mortality_regime::error::{Error, Result};
use mortality_regime::forecast::PredictionBands;
use serde::{Deserialize, Serialize};

/// One week of a cell's lines; `observed` is empty over forecast horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRow {
    pub region: String,
    pub age_group: String,
    pub iso_year: i32,
    pub iso_week: u32,
    pub observed: Option<f64>,
    pub baseline: f64,
    pub best_estimate: f64,
    pub state: usize,
}

pub fn write_lines(rows: &[LineRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_lines(path: &Path) -> Result<Vec<LineRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::format(path, format!("row {}: {e}", i + 2))))
        .collect()
}

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Series of one chart, all of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub labels: Vec<String>,
    pub observed: Vec<Option<f64>>,
    pub baseline: Vec<f64>,
    pub best_estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round step for about five y-axis ticks.
fn tick_step(range: f64) -> f64 {
    if !(range > 0.0) {
        return 1.0;
    }
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn polyline(points: &[(f64, f64)], colour: &str, width: f64, dash: Option<&str>) -> String {
    let mut d = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "" } else { " " });
    }
    let dash = dash.map(|v| format!(" stroke-dasharray=\"{v}\"")).unwrap_or_default();
    format!("<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"{width}\"{dash} points=\"{d}\"/>\n")
}

pub fn render_svg(chart: &Chart) -> String {
    let n = chart.labels.len();
    let all = chart
        .observed
        .iter()
        .flatten()
        .chain(&chart.baseline)
        .chain(&chart.best_estimate)
        .chain(&chart.lower)
        .chain(&chart.upper)
        .copied()
        .filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi) } else { (0.0, 1.0) };
    let step = tick_step(hi - lo);
    let y_max = (hi / step).ceil() * step;
    let y_max = if y_max > lo { y_max } else { lo + 1.0 };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |k: usize| LEFT + if n > 1 { k as f64 / (n - 1) as f64 * plot_w } else { plot_w / 2.0 };
    let y = |v: f64| TOP + (1.0 - (v - lo) / (y_max - lo)) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{LEFT}\" y=\"22\" font-size=\"14\">{}</text>", escape(&chart.title));

    let mut v = (lo / step).ceil() * step;
    while v <= y_max + 1e-9 * step {
        let yy = y(v);
        let _ = writeln!(s, "<line x1=\"{LEFT}\" x2=\"{:.2}\" y1=\"{yy:.2}\" y2=\"{yy:.2}\" stroke=\"#e0e0e0\"/>", WIDTH - RIGHT);
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>", LEFT - 6.0, yy + 4.0, format_tick(v));
        v += step;
    }
    let every = (n / 8).max(1);
    for k in (0..n).step_by(every) {
        let xx = x(k);
        let _ = writeln!(
            s,
            "<text x=\"{xx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            HEIGHT - BOTTOM + 18.0,
            escape(&chart.labels[k])
        );
    }
    let _ = writeln!(
        s,
        "<line x1=\"{LEFT}\" x2=\"{LEFT}\" y1=\"{TOP}\" y2=\"{:.2}\" stroke=\"black\"/>",
        HEIGHT - BOTTOM
    );
    let _ = writeln!(
        s,
        "<line x1=\"{LEFT}\" x2=\"{:.2}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        WIDTH - RIGHT,
        HEIGHT - BOTTOM,
        HEIGHT - BOTTOM
    );

    if n > 0 {
        let mut d = String::new();
        for k in 0..n {
            let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, x(k), y(chart.upper[k]));
        }
        for k in (0..n).rev() {
            let _ = write!(d, " L{:.2},{:.2}", x(k), y(chart.lower[k]));
        }
        let _ = writeln!(s, "<path d=\"{d} Z\" fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\"/>");
    }
    let pts = |vals: &[f64]| vals.iter().enumerate().map(|(k, &v)| (x(k), y(v))).collect::<Vec<_>>();
    s.push_str(&polyline(&pts(&chart.baseline), "#636363", 1.2, Some("4 3")));
    // observed segments break at missing weeks
    let mut run = Vec::new();
    for (k, o) in chart.observed.iter().enumerate() {
        match o {
            Some(v) => run.push((x(k), y(*v))),
            None if !run.is_empty() => {
                s.push_str(&polyline(&run, "black", 1.0, None));
                run.clear();
            }
            None => {}
        }
    }
    if !run.is_empty() {
        s.push_str(&polyline(&run, "black", 1.0, None));
    }
    s.push_str(&polyline(&pts(&chart.best_estimate), "#d62728", 1.4, None));

    let legend = [("#000000", "observed"), ("#636363", "baseline"), ("#d62728", "best estimate"), ("#9ecae1", "95% band")];
    for (i, (colour, name)) in legend.iter().enumerate() {
        let lx = LEFT + 10.0 + i as f64 * 130.0;
        let ly = HEIGHT - 12.0;
        let _ = writeln!(s, "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"14\" height=\"4\" fill=\"{colour}\"/>", ly - 4.0);
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{ly:.2}\">{name}</text>", lx + 20.0);
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1.0 || v == 0.0 {
        format!("{}", (v * 1000.0).round() / 1000.0)
    } else {
        format!("{v:.3}")
    }
}

fn file_name(region: &str, age: &str) -> String {
    let clean = |s: &str| s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect::<String>();
    let age = age.replace('+', "plus");
    format!("{}_{}.svg", clean(region), clean(&age))
}

/// Writes one chart per region and age group of `bands`. Line rows are
/// matched by region, age and week. Returns the number of files; an empty
/// band set writes nothing.
pub fn emit_charts(bands: &PredictionBands, lines: &[LineRow], dir: &Path) -> Result<usize> {
    if bands.n_cells() == 0 || bands.regions.is_empty() || bands.age_groups.is_empty() || bands.weeks.is_empty() {
        log::warn!("no prediction bands to chart; nothing written to {}", dir.display());
        return Ok(0);
    }
    let index: BTreeMap<(&str, &str, i32, u32), &LineRow> = lines
        .iter()
        .map(|l| ((l.region.as_str(), l.age_group.as_str(), l.iso_year, l.iso_week), l))
        .collect();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = 0;
    for (r, region) in bands.regions.iter().enumerate() {
        for (x, age) in bands.age_groups.iter().enumerate() {
            let n = bands.weeks.len();
            let mut chart = Chart {
                title: format!("{region}, {age}"),
                labels: Vec::with_capacity(n),
                observed: Vec::with_capacity(n),
                baseline: Vec::with_capacity(n),
                best_estimate: Vec::with_capacity(n),
                lower: Vec::with_capacity(n),
                upper: Vec::with_capacity(n),
            };
            for (k, week) in bands.weeks.iter().enumerate() {
                let c = bands.cell(r, x, k);
                let line = index.get(&(region.as_str(), age.as_str(), week.year, week.week)).ok_or_else(|| {
                    Error::validation(format!("no best-estimate line for {region}, {age}, {week}"))
                })?;
                chart.labels.push(week.to_string());
                chart.observed.push(line.observed);
                chart.baseline.push(line.baseline);
                chart.best_estimate.push(line.best_estimate);
                chart.lower.push(bands.q025[c]);
                chart.upper.push(bands.q975[c]);
            }
            let path = dir.join(file_name(region, age));
            std::fs::write(&path, render_svg(&chart)).map_err(|e| Error::io(&path, e))?;
            written += 1;
        }
    }
    log::info!("wrote {written} charts to {}", dir.display());
    Ok(written)
}
