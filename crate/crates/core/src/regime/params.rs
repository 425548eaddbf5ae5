use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{RegimeSpec, Transition, TRANSITIONS};

/// Sizes of every coefficient block; fixes the order of the flat vector θ:
/// α₁ (group-major), α₂, β₀₁, β₀₂, β₁₁, β₂₂.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_groups: usize,
    pub state_widths: [usize; 2],
    /// Including the intercept; zero when the specification has no shocks.
    pub trans_widths: [usize; 4],
}

impl ParamLayout {
    pub fn new(spec: &RegimeSpec, n_groups: usize) -> Self {
        let trans_widths = if spec.shocks {
            TRANSITIONS.map(|t| spec.transition_covariates(t).len() + 1)
        } else {
            [0; 4]
        };
        ParamLayout {
            n_groups,
            state_widths: [spec.state1.len(), spec.state2.len()],
            trans_widths,
        }
    }

    pub fn q(&self) -> usize {
        self.n_groups * (self.state_widths[0] + self.state_widths[1]) + self.trans_widths.iter().sum::<usize>()
    }

    /// Offset of `α_{s,g}` in θ.
    pub fn alpha_offset(&self, s: usize, g: usize) -> usize {
        let base = if s == 1 { 0 } else { self.n_groups * self.state_widths[0] };
        base + g * self.state_widths[s - 1]
    }

    pub fn beta_offset(&self, tr: Transition) -> usize {
        let alphas = self.n_groups * (self.state_widths[0] + self.state_widths[1]);
        alphas + self.trans_widths[..tr.index()].iter().sum::<usize>()
    }

    /// Human-readable name of every θ coordinate.
    pub fn labels(&self, spec: &RegimeSpec, groups: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.q());
        for s in 1..=2 {
            for g in groups {
                for c in spec.state_covariates(s) {
                    out.push(format!("alpha{s}[{g}].{c}"));
                }
            }
        }
        if spec.shocks {
            for tr in TRANSITIONS {
                let tag = &tr.label()[5..];
                out.push(format!("beta{tag}.intercept"));
                for c in spec.transition_covariates(tr) {
                    out.push(format!("beta{tag}.{c}"));
                }
            }
        }
        out
    }
}

/// Regime-switching parameters θ plus the initial-state distribution ρ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    /// `alpha1[g][j]`: state-1 coefficient of covariate `j` for reduced group `g`.
    pub alpha1: Vec<Vec<f64>>,
    pub alpha2: Vec<Vec<f64>>,
    /// Transition coefficients, intercept first.
    pub beta01: Vec<f64>,
    pub beta02: Vec<f64>,
    pub beta11: Vec<f64>,
    pub beta22: Vec<f64>,
    pub rho: [f64; 3],
}

impl RegimeParams {
    /// EM starting point: no covariate effects, rare entries into shocks,
    /// persistent shocks once entered.
    pub fn initial(layout: &ParamLayout, shocks: bool) -> Self {
        let beta = |w: usize, intercept: f64| {
            let mut v = vec![0.0; w];
            if w > 0 {
                v[0] = intercept;
            }
            v
        };
        RegimeParams {
            alpha1: vec![vec![0.0; layout.state_widths[0]]; layout.n_groups],
            alpha2: vec![vec![0.0; layout.state_widths[1]]; layout.n_groups],
            beta01: beta(layout.trans_widths[0], -3.0),
            beta02: beta(layout.trans_widths[1], -3.0),
            beta11: beta(layout.trans_widths[2], 1.0),
            beta22: beta(layout.trans_widths[3], 1.0),
            rho: if shocks { [0.98, 0.01, 0.01] } else { [1.0, 0.0, 0.0] },
        }
    }

    pub fn alpha(&self, s: usize) -> &Vec<Vec<f64>> {
        match s {
            1 => &self.alpha1,
            2 => &self.alpha2,
            _ => panic!("state {s} has no alpha block"),
        }
    }

    pub fn alpha_mut(&mut self, s: usize) -> &mut Vec<Vec<f64>> {
        match s {
            1 => &mut self.alpha1,
            2 => &mut self.alpha2,
            _ => panic!("state {s} has no alpha block"),
        }
    }

    pub fn beta(&self, tr: Transition) -> &Vec<f64> {
        match tr {
            Transition::T01 => &self.beta01,
            Transition::T02 => &self.beta02,
            Transition::T11 => &self.beta11,
            Transition::T22 => &self.beta22,
        }
    }

    pub fn beta_mut(&mut self, tr: Transition) -> &mut Vec<f64> {
        match tr {
            Transition::T01 => &mut self.beta01,
            Transition::T02 => &mut self.beta02,
            Transition::T11 => &mut self.beta11,
            Transition::T22 => &mut self.beta22,
        }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_groups: self.alpha1.len(),
            state_widths: [
                self.alpha1.first().map_or(0, Vec::len),
                self.alpha2.first().map_or(0, Vec::len),
            ],
            trans_widths: TRANSITIONS.map(|t| self.beta(t).len()),
        }
    }

    /// Flat θ in layout order (ρ excluded).
    pub fn theta(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for s in 1..=2 {
            for g in self.alpha(s) {
                out.extend(g);
            }
        }
        for tr in TRANSITIONS {
            out.extend(self.beta(tr));
        }
        out
    }

    /// Copy with θ replaced; ρ is kept.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let layout = self.layout();
        if theta.len() != layout.q() {
            return Err(Error::validation(format!(
                "parameter vector has {} entries, the layout needs {}",
                theta.len(),
                layout.q()
            )));
        }
        let mut out = self.clone();
        let mut pos = 0;
        for s in 1..=2 {
            for g in out.alpha_mut(s).iter_mut() {
                let w = g.len();
                g.copy_from_slice(&theta[pos..pos + w]);
                pos += w;
            }
        }
        for tr in TRANSITIONS {
            let b = out.beta_mut(tr);
            let w = b.len();
            b.copy_from_slice(&theta[pos..pos + w]);
            pos += w;
        }
        Ok(out)
    }

    /// Checks block sizes against `layout`, finiteness, and that ρ is a distribution.
    pub fn validate(&self, layout: &ParamLayout) -> Result<()> {
        if &self.layout() != layout {
            return Err(Error::validation(format!(
                "parameter blocks {:?} do not match the specification {:?}",
                self.layout(),
                layout
            )));
        }
        if self.theta().iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("regime parameters contain non-finite values"));
        }
        let sum: f64 = self.rho.iter().sum();
        if self.rho.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("initial-state probabilities {:?} are not a distribution", self.rho)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_round_trip_and_offsets() {
        let spec = RegimeSpec::default();
        let layout = ParamLayout::new(&spec, 3);
        assert_eq!(layout.q(), 50);
        let p = RegimeParams::initial(&layout, true);
        assert_eq!(p.layout(), layout);
        let theta: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let q = p.with_theta(&theta).unwrap();
        assert_eq!(q.theta(), theta);
        assert_eq!(q.alpha2[1][0], theta[layout.alpha_offset(2, 1)]);
        assert_eq!(q.beta22[0], theta[layout.beta_offset(Transition::T22)]);
        assert_eq!(layout.labels(&spec, &["a".into(), "b".into(), "c".into()]).len(), 50);
        assert!(p.with_theta(&theta[..49]).is_err());
    }

    #[test]
    fn initial_values() {
        let layout = ParamLayout::new(&RegimeSpec::default(), 3);
        let p = RegimeParams::initial(&layout, true);
        assert_eq!(p.beta01[0], -3.0);
        assert_eq!(p.beta11[0], 1.0);
        assert!(p.alpha1.iter().flatten().all(|&a| a == 0.0));
        assert_eq!(p.rho, [0.98, 0.01, 0.01]);
        p.validate(&layout).unwrap();
        let mut bad = p.clone();
        bad.rho = [0.5, 0.6, -0.1];
        assert!(bad.validate(&layout).is_err());
    }
}
