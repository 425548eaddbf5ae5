use std::collections::BTreeMap;

use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::features::{FeatureFrame, Standardizer};
use crate::panel::{MortalityPanel, WeekIndex};

use super::{RegimeSpec, TRANSITIONS};

/// Covariate rows per (region, week), laid out `values[(r * T + k) * width + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBlock {
    pub names: Vec<String>,
    /// A leading column of ones precedes `names`.
    pub intercept: bool,
    width: usize,
    n_weeks: usize,
    values: Vec<f64>,
}

impl CovariateBlock {
    fn assemble(
        names: &[String],
        intercept: bool,
        n_regions: usize,
        n_weeks: usize,
        columns: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let width = names.len() + usize::from(intercept);
        let mut values = Vec::with_capacity(n_regions * n_weeks * width);
        let cols: Vec<&Vec<f64>> = names
            .iter()
            .map(|n| {
                columns
                    .get(n)
                    .ok_or_else(|| Error::validation(format!("covariate '{n}' was not supplied")))
            })
            .collect::<Result<_>>()?;
        for c in &cols {
            if c.len() != n_regions * n_weeks {
                return Err(Error::validation("covariate column length does not match regions × weeks"));
            }
        }
        for cell in 0..n_regions * n_weeks {
            if intercept {
                values.push(1.0);
            }
            for (j, c) in cols.iter().enumerate() {
                let v = c[cell];
                if !v.is_finite() {
                    return Err(Error::validation(format!(
                        "covariate '{}' is not finite for region {} week {}",
                        names[j],
                        cell / n_weeks,
                        cell % n_weeks + 1
                    )));
                }
                values.push(v);
            }
        }
        Ok(CovariateBlock { names: names.to_vec(), intercept, width, n_weeks, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, r: usize, k: usize) -> &[f64] {
        let start = (r * self.n_weeks + k) * self.width;
        &self.values[start..start + self.width]
    }
}

/// Everything the regime model sees: counts, fixed baseline means and the
/// covariate rows of every state mean and transition logit.
#[derive(Debug, Clone)]
pub struct RegimeData {
    pub regions: Vec<String>,
    pub age_groups: Vec<String>,
    pub weeks: WeekIndex,
    pub groups: Vec<String>,
    pub group_of_age: Vec<usize>,
    pub shocks: bool,
    deaths: Vec<f64>,
    log_fact: Vec<f64>,
    b_hat: Vec<f64>,
    pub state_z: [CovariateBlock; 2],
    pub trans_z: [CovariateBlock; 4],
}

impl RegimeData {
    /// Assembles the model inputs from covariate columns that are already on
    /// the model scale (`columns[name][r * T + k]`).
    pub fn from_columns(
        spec: &RegimeSpec,
        regions: Vec<String>,
        age_groups: Vec<String>,
        weeks: WeekIndex,
        deaths: &[u32],
        b_hat: Vec<f64>,
        columns: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        spec.validate()?;
        let (r, x, t) = (regions.len(), age_groups.len(), weeks.len());
        if deaths.len() != r * x * t || b_hat.len() != r * x * t {
            return Err(Error::validation(format!(
                "deaths and baseline must have {} cells ({r} regions × {x} ages × {t} weeks)",
                r * x * t
            )));
        }
        if let Some(i) = b_hat.iter().position(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::validation(format!("baseline mean {} at cell {i} is not positive", b_hat[i])));
        }
        let (groups, group_of_age) = spec.reduced_groups(&age_groups);
        let state_z = [
            CovariateBlock::assemble(&spec.state1, false, r, t, columns)?,
            CovariateBlock::assemble(&spec.state2, false, r, t, columns)?,
        ];
        let trans_z = TRANSITIONS.map(|tr| {
            CovariateBlock::assemble(spec.transition_covariates(tr), spec.shocks, r, t, columns)
        });
        let [a, b, c, d] = trans_z;
        Ok(RegimeData {
            regions,
            age_groups,
            weeks,
            groups,
            group_of_age,
            shocks: spec.shocks,
            deaths: deaths.iter().map(|&v| f64::from(v)).collect(),
            log_fact: deaths.iter().map(|&v| ln_factorial(u64::from(v))).collect(),
            b_hat,
            state_z,
            trans_z: [a?, b?, c?, d?],
        })
    }

    /// Model inputs from a panel, its fitted baseline and the feature frame.
    /// Missing lag history (NaN) is read as zero in raw units before the
    /// standardizer is applied.
    pub fn build(
        spec: &RegimeSpec,
        panel: &MortalityPanel,
        b_hat: &[f64],
        frame: &FeatureFrame,
        standardizer: &Standardizer,
    ) -> Result<Self> {
        let frame = if frame.weeks() == panel.weeks() { frame.clone() } else { frame.slice(panel.weeks())? };
        if frame.regions() != panel.regions() {
            return Err(Error::validation("feature frame regions differ from the panel regions"));
        }
        let mut columns = BTreeMap::new();
        for name in spec.columns() {
            let raw = frame.require(&name)?;
            let col = raw
                .iter()
                .map(|&v| standardizer.apply(&name, if v.is_nan() { 0.0 } else { v }))
                .collect();
            columns.insert(name, col);
        }
        Self::from_columns(
            spec,
            panel.regions().to_vec(),
            panel.age_groups().to_vec(),
            panel.weeks().clone(),
            panel.deaths_slice(),
            b_hat.to_vec(),
            &columns,
        )
    }

    /// Same design with replacement death counts.
    pub fn with_deaths(&self, deaths: &[u32]) -> Result<Self> {
        if deaths.len() != self.deaths.len() {
            return Err(Error::validation("replacement deaths have the wrong number of cells"));
        }
        let mut out = self.clone();
        out.deaths = deaths.iter().map(|&v| f64::from(v)).collect();
        out.log_fact = deaths.iter().map(|&v| ln_factorial(u64::from(v))).collect();
        Ok(out)
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

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn cell(&self, r: usize, x: usize, k: usize) -> usize {
        (r * self.n_ages() + x) * self.n_weeks() + k
    }

    pub fn deaths(&self, r: usize, x: usize, k: usize) -> f64 {
        self.deaths[self.cell(r, x, k)]
    }

    pub fn log_factorial(&self, r: usize, x: usize, k: usize) -> f64 {
        self.log_fact[self.cell(r, x, k)]
    }

    pub fn b_hat(&self, r: usize, x: usize, k: usize) -> f64 {
        self.b_hat[self.cell(r, x, k)]
    }

    pub fn b_hat_slice(&self) -> &[f64] {
        &self.b_hat
    }

    pub fn deaths_u32(&self) -> Vec<u32> {
        self.deaths.iter().map(|&d| d as u32).collect()
    }
}

/// Scalers for every covariate column the specification uses.
pub fn fit_standardizer(spec: &RegimeSpec, frame: &FeatureFrame) -> Result<Standardizer> {
    Standardizer::fit(frame, &spec.columns())
}
