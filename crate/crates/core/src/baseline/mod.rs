//! Seasonal Serfling baseline fitted by spatially penalized Poisson regression.
//!
//! `log μ = log E + γ₀ + γ₁ t + γ₂ sin(2πw/52.18) + γ₃ cos(2πw/52.18)
//!          + γ₄ sin(2πw/26.09) + γ₅ cos(2πw/26.09)` per region and age group,
//! with penalty `Σ_p λ_p Σ_x γ_{x,p}ᵀ (D − W) γ_{x,p}` smoothing each
//! coefficient across neighbouring regions.

mod pirls;

pub use pirls::{
    fit_penalized_poisson, penalized_gradient, penalized_objective, PirlsFit, PirlsOptions, PoissonBlock,
};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{IsoWeek, MortalityPanel, RegionGraph, WeekIndex, WEEKS_PER_YEAR};

pub const N_COEF: usize = 6;
pub const SCHEMA_VERSION: u32 = 1;

/// `[1, t, sin(2πw/52.18), cos(2πw/52.18), sin(2πw/26.09), cos(2πw/26.09)]`.
pub fn design_row(t: f64, w: f64) -> [f64; N_COEF] {
    let a = 2.0 * std::f64::consts::PI * w / WEEKS_PER_YEAR;
    let b = 2.0 * std::f64::consts::PI * w / (WEEKS_PER_YEAR / 2.0);
    [1.0, t, a.sin(), a.cos(), b.sin(), b.cos()]
}

/// Design matrix for `weeks`, with `t` counted from `origin` (ordinal 1).
pub fn design_matrix(weeks: &WeekIndex, origin: IsoWeek) -> DMatrix<f64> {
    let base = WeekIndex::from_start(origin, 1);
    DMatrix::from_fn(weeks.len(), N_COEF, |k, p| {
        let week = weeks.iso(k + 1);
        let t = (base.offset_of(week) + 1) as f64;
        design_row(t, f64::from(week.week))[p]
    })
}

/// Penalty matrix `2 Σ_p λ_p (D − W) ⊗ e_p e_pᵀ` in `r·6 + p` ordering
/// (the factor 2 because the solver minimizes `Dev/2 + ½γᵀPγ`).
pub fn penalty_matrix(graph: &RegionGraph, lambda: &[f64; N_COEF]) -> DMatrix<f64> {
    let l = graph.laplacian();
    let n = graph.len();
    let mut p = DMatrix::zeros(n * N_COEF, n * N_COEF);
    for r in 0..n {
        for s in 0..n {
            if l[(r, s)] != 0.0 {
                for (q, lam) in lambda.iter().enumerate() {
                    p[(r * N_COEF + q, s * N_COEF + q)] = 2.0 * lam * l[(r, s)];
                }
            }
        }
    }
    p
}

/// `Σ_p λ_p γ_{·,p}ᵀ (D − W) γ_{·,p}` for one age group's coefficients (`r·6 + p`).
pub fn penalty_value(graph: &RegionGraph, lambda: &[f64; N_COEF], gamma: &[f64]) -> f64 {
    (0..N_COEF)
        .map(|p| {
            let col: Vec<f64> = (0..graph.len()).map(|r| gamma[r * N_COEF + p]).collect();
            lambda[p] * graph.laplacian_quadratic(&col)
        })
        .sum()
}

/// Fitted baseline for every region and age group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    pub schema_version: u32,
    pub regions: Vec<String>,
    pub age_groups: Vec<String>,
    /// Week with design ordinal `t = 1`.
    pub origin: IsoWeek,
    pub weeks: WeekIndex,
    /// `gamma[x][r·6 + p]`.
    pub gamma: Vec<Vec<f64>>,
    pub lambda: [f64; N_COEF],
    pub n: usize,
    pub edf: f64,
    pub deviance: f64,
    pub ubre: f64,
    /// `b̂` laid out like the panel cells.
    pub fitted_b: Vec<f64>,
    /// Penalized information per age group, `r·6 + p` ordering.
    pub fisher: Vec<Vec<Vec<f64>>>,
    /// UBRE score of every λ combination visited by the search.
    pub search: Vec<([f64; N_COEF], f64)>,
}

impl BaselineFit {
    pub fn gamma(&self, r: usize, x: usize, p: usize) -> f64 {
        self.gamma[x][r * N_COEF + p]
    }

    pub fn fisher_matrix(&self, x: usize) -> DMatrix<f64> {
        let k = self.fisher[x].len();
        DMatrix::from_fn(k, k, |i, j| self.fisher[x][i][j])
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_ages(&self) -> usize {
        self.age_groups.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fit: BaselineFit = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if fit.schema_version != SCHEMA_VERSION {
            return Err(Error::format(path, format!("unsupported schema version {}", fit.schema_version)));
        }
        Ok(fit)
    }
}

/// Result of fitting all age groups at one λ.
struct LambdaFit {
    fits: Vec<PirlsFit>,
    deviance: f64,
    edf: f64,
    ubre: f64,
}

struct Problem<'a> {
    panel: &'a MortalityPanel,
    design: DMatrix<f64>,
    n: usize,
}

impl<'a> Problem<'a> {
    fn new(panel: &'a MortalityPanel) -> Result<Self> {
        for r in 0..panel.n_regions() {
            for x in 0..panel.n_ages() {
                for k in 0..panel.n_weeks() {
                    if panel.weight(k) > 0.0 && panel.exposure(r, x, k) <= 0.0 {
                        return Err(Error::validation(format!(
                            "exposure is zero for region '{}', age group '{}', week {}; mask the week or fix the population",
                            panel.regions()[r],
                            panel.age_groups()[x],
                            panel.weeks().iso(k + 1)
                        )));
                    }
                }
            }
        }
        let n = panel.n_unmasked_cells();
        if n == 0 {
            return Err(Error::validation("no usable observations: every week is masked"));
        }
        let design = design_matrix(panel.weeks(), panel.weeks().first());
        Ok(Problem { panel, design, n })
    }

    fn blocks(&self, x: usize) -> Vec<PoissonBlock<'_>> {
        let p = self.panel;
        (0..p.n_regions())
            .map(|r| {
                let t = p.n_weeks();
                PoissonBlock {
                    x: &self.design,
                    y: (0..t).map(|k| f64::from(p.deaths(r, x, k))).collect(),
                    offset: (0..t)
                        .map(|k| {
                            let e = p.exposure(r, x, k);
                            if e > 0.0 { e.ln() } else { 0.0 }
                        })
                        .collect(),
                    weight: (0..t).map(|k| p.weight(k)).collect(),
                }
            })
            .collect()
    }

    /// Per-region weighted least squares of `log((d + 0.5)/E)` on the design.
    fn initial(&self, x: usize) -> DVector<f64> {
        let p = self.panel;
        let mut out = DVector::zeros(p.n_regions() * N_COEF);
        for r in 0..p.n_regions() {
            let mut xtx = DMatrix::<f64>::zeros(N_COEF, N_COEF);
            let mut xty = DVector::<f64>::zeros(N_COEF);
            for k in 0..p.n_weeks() {
                let e = p.exposure(r, x, k);
                if p.weight(k) == 0.0 || e <= 0.0 {
                    continue;
                }
                let z = ((f64::from(p.deaths(r, x, k)) + 0.5) / e).ln();
                let row = self.design.row(k).transpose();
                xtx += &row * row.transpose();
                xty += &row * z;
            }
            xtx += DMatrix::identity(N_COEF, N_COEF) * 1e-8;
            let sol = xtx
                .clone()
                .cholesky()
                .map(|c| c.solve(&xty))
                .unwrap_or_else(|| DVector::zeros(N_COEF));
            out.rows_mut(r * N_COEF, N_COEF).copy_from(&sol);
        }
        out
    }

    fn fit(&self, graph: &RegionGraph, lambda: &[f64; N_COEF], warm: Option<&[DVector<f64>]>) -> Result<LambdaFit> {
        let penalty = penalty_matrix(graph, lambda);
        let fits = (0..self.panel.n_ages())
            .into_par_iter()
            .map(|x| {
                let init = match warm {
                    Some(w) => w[x].clone(),
                    None => self.initial(x),
                };
                fit_penalized_poisson(&self.blocks(x), &penalty, init, PirlsOptions::default())
            })
            .collect::<Result<Vec<_>>>()?;
        let deviance: f64 = fits.iter().map(|f| f.deviance).sum();
        let edf: f64 = fits.iter().map(|f| f.edf).sum();
        let n = self.n as f64;
        Ok(LambdaFit {
            ubre: deviance / n - 1.0 + 2.0 * edf / n,
            fits,
            deviance,
            edf,
        })
    }
}

/// Candidate values of each `λ_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: [Vec<f64>; N_COEF],
}

impl LambdaGrid {
    pub fn uniform(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("λ grid must not be empty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation("λ grid values must be finite and nonnegative"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        Ok(LambdaGrid {
            values: std::array::from_fn(|_| v.clone()),
        })
    }

    pub fn fixed(lambda: [f64; N_COEF]) -> Self {
        LambdaGrid {
            values: std::array::from_fn(|p| vec![lambda[p]]),
        }
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::uniform(&[0.0, 0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5]).expect("valid default grid")
    }
}

/// Outcome of the UBRE coordinate search.
#[derive(Debug, Clone)]
pub struct UbreSelection {
    pub lambda: [f64; N_COEF],
    pub ubre: f64,
    pub visited: Vec<([f64; N_COEF], f64)>,
}

fn coordinate_search(problem: &Problem, graph: &RegionGraph, grid: &LambdaGrid) -> Result<(UbreSelection, LambdaFit)> {
    let mut lambda: [f64; N_COEF] = std::array::from_fn(|p| {
        let g = &grid.values[p];
        g[(g.len() - 1) / 2]
    });
    let mut best = problem.fit(graph, &lambda, None)?;
    let mut visited = vec![(lambda, best.ubre)];
    for p in 0..N_COEF {
        // larger λ first so that ties keep the smoother fit
        for &cand in grid.values[p].iter().rev() {
            if cand == lambda[p] {
                continue;
            }
            let mut trial = lambda;
            trial[p] = cand;
            let warm: Vec<DVector<f64>> = best.fits.iter().map(|f| f.coef.clone()).collect();
            let fit = problem.fit(graph, &trial, Some(&warm))?;
            visited.push((trial, fit.ubre));
            let better = fit.ubre < best.ubre || (fit.ubre == best.ubre && cand > lambda[p]);
            if better {
                lambda = trial;
                best = fit;
            }
        }
    }
    Ok((UbreSelection { lambda, ubre: best.ubre, visited }, best))
}

/// Chooses `λ_p` by a one-pass coordinate search over the grid minimizing
/// `UBRE = Dev/n − 1 + 2·edf/n`; ties go to the larger λ.
pub fn ubre_select(panel: &MortalityPanel, graph: &RegionGraph, grid: &LambdaGrid) -> Result<UbreSelection> {
    check_graph(panel, graph)?;
    let problem = Problem::new(panel)?;
    Ok(coordinate_search(&problem, graph, grid)?.0)
}

fn check_graph(panel: &MortalityPanel, graph: &RegionGraph) -> Result<()> {
    if graph.regions() != panel.regions() {
        return Err(Error::validation("adjacency graph regions differ from the panel regions"));
    }
    Ok(())
}

/// Fits the baseline with `λ` chosen by [`ubre_select`].
pub fn fit_baseline(panel: &MortalityPanel, graph: &RegionGraph, grid: &LambdaGrid) -> Result<BaselineFit> {
    check_graph(panel, graph)?;
    let problem = Problem::new(panel)?;
    let (sel, best) = coordinate_search(&problem, graph, grid)?;
    log::info!("baseline: λ = {:?}, UBRE = {:.6}, edf = {:.2}", sel.lambda, sel.ubre, best.edf);
    let gamma: Vec<Vec<f64>> = best.fits.iter().map(|f| f.coef.as_slice().to_vec()).collect();
    let fisher = best
        .fits
        .iter()
        .map(|f| f.hessian.row_iter().map(|row| row.iter().copied().collect()).collect())
        .collect();
    let mut fit = BaselineFit {
        schema_version: SCHEMA_VERSION,
        regions: panel.regions().to_vec(),
        age_groups: panel.age_groups().to_vec(),
        origin: panel.weeks().first(),
        weeks: panel.weeks().clone(),
        gamma,
        lambda: sel.lambda,
        n: problem.n,
        edf: best.edf,
        deviance: best.deviance,
        ubre: sel.ubre,
        fitted_b: Vec::new(),
        fisher,
        search: sel.visited,
    };
    fit.fitted_b = predict_baseline(&fit, panel.weeks(), panel.exposures_slice())?;
    Ok(fit)
}

/// `b̂ = E · exp(design · γ)` for every region, age group and week of
/// `weeks`; `exposures` use the panel cell layout over `weeks`.
pub fn predict_baseline(fit: &BaselineFit, weeks: &WeekIndex, exposures: &[f64]) -> Result<Vec<f64>> {
    predict_with_gamma(fit, &fit.gamma, weeks, exposures)
}

/// As [`predict_baseline`] with replacement coefficients (bootstrap draws).
pub fn predict_with_gamma(fit: &BaselineFit, gamma: &[Vec<f64>], weeks: &WeekIndex, exposures: &[f64]) -> Result<Vec<f64>> {
    let (n_r, n_x, n_t) = (fit.n_regions(), fit.n_ages(), weeks.len());
    if exposures.len() != n_r * n_x * n_t {
        return Err(Error::validation(format!(
            "baseline prediction needs {} exposures, got {}",
            n_r * n_x * n_t,
            exposures.len()
        )));
    }
    let design = design_matrix(weeks, fit.origin);
    let mut out = vec![0.0; exposures.len()];
    for r in 0..n_r {
        for x in 0..n_x {
            let g = &gamma[x][r * N_COEF..(r + 1) * N_COEF];
            for k in 0..n_t {
                let eta: f64 = (0..N_COEF).map(|p| design[(k, p)] * g[p]).sum();
                let cell = (r * n_x + x) * n_t + k;
                out[cell] = exposures[cell] * eta.exp();
            }
        }
    }
    Ok(out)
}

/// Penalized objective `−ℓ(γ) + Σ_p λ_p γ_{·,p}ᵀ(D − W)γ_{·,p}` of age group
/// `x` up to a constant (deviance form).
pub fn baseline_objective(panel: &MortalityPanel, graph: &RegionGraph, lambda: &[f64; N_COEF], x: usize, gamma: &[f64]) -> Result<f64> {
    let problem = Problem::new(panel)?;
    penalized_objective(&problem.blocks(x), &penalty_matrix(graph, lambda), &DVector::from_column_slice(gamma))
        .ok_or_else(|| Error::numerical("non-finite baseline mean"))
}

/// Gradient of the penalized objective of age group `x` at `gamma`.
pub fn baseline_gradient(panel: &MortalityPanel, graph: &RegionGraph, lambda: &[f64; N_COEF], x: usize, gamma: &[f64]) -> Result<Vec<f64>> {
    let problem = Problem::new(panel)?;
    penalized_gradient(&problem.blocks(x), &penalty_matrix(graph, lambda), &DVector::from_column_slice(gamma))
        .map(|g| g.as_slice().to_vec())
        .ok_or_else(|| Error::numerical("non-finite baseline mean"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_row_examples() {
        let q = design_row(1.0, WEEKS_PER_YEAR / 4.0);
        assert!((q[2] - 1.0).abs() < 1e-15);
        let h = design_row(1.0, WEEKS_PER_YEAR / 2.0);
        assert!((h[3] + 1.0).abs() < 1e-15);
        let r = design_row(100.0, 20.0);
        let two_pi = 2.0 * std::f64::consts::PI;
        assert_eq!(r[0], 1.0);
        assert_eq!(r[1], 100.0);
        assert!((r[2] - (two_pi * 20.0 / 52.18).sin()).abs() < 1e-15);
        assert!((r[5] - (two_pi * 20.0 / 26.09).cos()).abs() < 1e-15);
        assert!(r[2..].iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn design_origin_shifts_t() {
        let weeks = WeekIndex::build((2020, 1), (2020, 10)).unwrap();
        let d = design_matrix(&weeks, weeks.first());
        assert_eq!(d[(0, 1)], 1.0);
        assert_eq!(d[(9, 1)], 10.0);
        let later = WeekIndex::build((2020, 5), (2020, 6)).unwrap();
        let d2 = design_matrix(&later, weeks.first());
        assert_eq!(d2[(0, 1)], 5.0);
        assert_eq!(d2[(0, 2)], d[(4, 2)]);
    }

    #[test]
    fn penalty_matrix_matches_value() {
        let g = RegionGraph::path(3);
        let lambda = [1.0, 2.0, 0.5, 0.0, 3.0, 1.5];
        let gamma: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = penalty_matrix(&g, &lambda);
        let v = DVector::from_column_slice(&gamma);
        let quad = 0.5 * v.dot(&(&p * &v));
        assert!((quad - penalty_value(&g, &lambda, &gamma)).abs() < 1e-12);
    }
}
