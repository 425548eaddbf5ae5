use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{Transition, TRANSITIONS};

/// Which covariates enter each state mean and each transition logit, and how
/// age groups share the state-mean coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    /// `false` collapses the chain onto the baseline state.
    pub shocks: bool,
    pub state1: Vec<String>,
    pub state2: Vec<String>,
    pub trans01: Vec<String>,
    pub trans02: Vec<String>,
    pub trans11: Vec<String>,
    pub trans22: Vec<String>,
    /// Age group to reduced (shared-coefficient) group; unmapped ages stand alone.
    pub age_sharing: BTreeMap<String, String>,
}

#[derive(Deserialize, Serialize)]
struct Section {
    #[serde(default)]
    covariates: Vec<String>,
}

#[derive(Deserialize, Serialize)]
struct ModelSection {
    #[serde(default = "yes")]
    shocks: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    #[serde(default)]
    model: Option<ModelSection>,
    state1: Section,
    state2: Section,
    trans01: Section,
    trans02: Section,
    trans11: Section,
    trans22: Section,
    #[serde(default)]
    age_groups: BTreeMap<String, String>,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn default_age_sharing() -> BTreeMap<String, String> {
    [
        ("65-69", "65-74"),
        ("70-74", "65-74"),
        ("75-79", "75-84"),
        ("80-84", "75-84"),
        ("85-89", "85+"),
        ("90+", "85+"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

impl Default for RegimeSpec {
    fn default() -> Self {
        RegimeSpec {
            shocks: true,
            state1: names(&["TA", "TA_lag1", "TA_lag2", "HI", "HI_lag1", "HI_lag2"]),
            state2: names(&[
                "IA_avg01_hinge75",
                "IA_avg23_hinge75",
                "CI_avg01",
                "CI_avg23",
                "HA_avg01_hinge75",
                "HA_avg23_hinge75",
            ]),
            trans01: names(&["HI"]),
            trans02: names(&["IA_avg01_hinge75", "HA_avg01_hinge75"]),
            trans11: names(&["HI", "HI_lag1", "HI_lag2"]),
            trans22: names(&["IA_avg01_hinge75", "IA_avg23_hinge75", "HA_avg01_hinge75", "HA_avg23_hinge75"]),
            age_sharing: default_age_sharing(),
        }
    }
}

impl RegimeSpec {
    /// Chain pinned to the baseline state; no shock parameters.
    pub fn baseline_only() -> Self {
        RegimeSpec {
            shocks: false,
            state1: Vec::new(),
            state2: Vec::new(),
            trans01: Vec::new(),
            trans02: Vec::new(),
            trans11: Vec::new(),
            trans22: Vec::new(),
            age_sharing: BTreeMap::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SpecFile =
            toml::from_str(text).map_err(|e| Error::validation(format!("regime specification: {e}")))?;
        let spec = RegimeSpec {
            shocks: file.model.map(|m| m.shocks).unwrap_or(true),
            state1: file.state1.covariates,
            state2: file.state2.covariates,
            trans01: file.trans01.covariates,
            trans02: file.trans02.covariates,
            trans11: file.trans11.covariates,
            trans22: file.trans22.covariates,
            age_sharing: file.age_groups,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Validation(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        let sec = |v: &Vec<String>| Section { covariates: v.clone() };
        let file = SpecFile {
            model: Some(ModelSection { shocks: self.shocks }),
            state1: sec(&self.state1),
            state2: sec(&self.state2),
            trans01: sec(&self.trans01),
            trans02: sec(&self.trans02),
            trans11: sec(&self.trans11),
            trans22: sec(&self.trans22),
            age_groups: self.age_sharing.clone(),
        };
        toml::to_string(&file).expect("regime specification serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut lists = vec![("state1", &self.state1), ("state2", &self.state2)];
        for tr in TRANSITIONS {
            lists.push((tr.label(), self.transition_covariates(tr)));
        }
        for (label, list) in lists {
            let mut seen = std::collections::BTreeSet::new();
            for name in list {
                if name.trim().is_empty() {
                    return Err(Error::validation(format!("[{label}] contains an empty covariate name")));
                }
                if !seen.insert(name) {
                    return Err(Error::validation(format!("[{label}] lists covariate '{name}' twice")));
                }
            }
        }
        if !self.shocks {
            let any = !self.state1.is_empty()
                || !self.state2.is_empty()
                || TRANSITIONS.iter().any(|&t| !self.transition_covariates(t).is_empty());
            if any {
                return Err(Error::validation("a specification without shocks cannot list covariates"));
            }
        }
        Ok(())
    }

    /// Covariates of the state-`s` mean (`s` is 1 or 2).
    pub fn state_covariates(&self, s: usize) -> &[String] {
        match s {
            1 => &self.state1,
            2 => &self.state2,
            _ => panic!("state {s} has no covariates"),
        }
    }

    /// Slope covariates of a transition logit (the intercept is implicit).
    pub fn transition_covariates(&self, tr: Transition) -> &Vec<String> {
        match tr {
            Transition::T01 => &self.trans01,
            Transition::T02 => &self.trans02,
            Transition::T11 => &self.trans11,
            Transition::T22 => &self.trans22,
        }
    }

    /// Every distinct feature column the specification needs, in first-use order.
    pub fn columns(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let all = self
            .state1
            .iter()
            .chain(&self.state2)
            .chain(&self.trans01)
            .chain(&self.trans02)
            .chain(&self.trans11)
            .chain(&self.trans22);
        for name in all {
            if !out.contains(name) {
                out.push(name.clone());
            }
        }
        out
    }

    /// Reduced groups (in order of first appearance) and the group of each age.
    pub fn reduced_groups(&self, age_groups: &[String]) -> (Vec<String>, Vec<usize>) {
        let mut groups: Vec<String> = Vec::new();
        let mut index = Vec::with_capacity(age_groups.len());
        for age in age_groups {
            let g = self.age_sharing.get(age).unwrap_or(age);
            let pos = match groups.iter().position(|x| x == g) {
                Some(p) => p,
                None => {
                    groups.push(g.clone());
                    groups.len() - 1
                }
            };
            index.push(pos);
        }
        (groups, index)
    }
}
