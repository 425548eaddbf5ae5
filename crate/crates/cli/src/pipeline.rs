//! Stage runner with content-hash caching and a run manifest.
//!
//! A stage's key hashes its name, its settings and the bytes of every input
//! (raw files and upstream artifacts). A stage is skipped when the previous
//! manifest records the same key and every artifact still hashes to the
//! recorded value. Stages own one directory under the output root; a
//! failure leaves whatever was written plus a `.failed` marker.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mortality_regime::error::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{file_hash, sha256_hex, ProjectConfig};

pub const MANIFEST: &str = "manifest.json";
pub const FAILED_MARKER: &str = ".failed";
const PROVENANCE: &str = "provenance.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Features,
    FitBaseline,
    FitRegime,
    Fim,
    Forecast,
    ScenarioSirs,
    AssembleScenarios,
    ScenarioForecast,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Features,
        Stage::FitBaseline,
        Stage::FitRegime,
        Stage::Fim,
        Stage::Forecast,
        Stage::ScenarioSirs,
        Stage::AssembleScenarios,
        Stage::ScenarioForecast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::FitBaseline => "fit-baseline",
            Stage::FitRegime => "fit-regime",
            Stage::Fim => "fim",
            Stage::Forecast => "forecast",
            Stage::ScenarioSirs => "scenario-sirs",
            Stage::AssembleScenarios => "assemble-scenarios",
            Stage::ScenarioForecast => "scenario-forecast",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Features | Stage::FitBaseline | Stage::ScenarioSirs => &[Stage::Ingest],
            Stage::FitRegime => &[Stage::Ingest, Stage::Features, Stage::FitBaseline],
            Stage::Fim => &[Stage::FitRegime],
            Stage::Forecast => &[Stage::Fim],
            Stage::AssembleScenarios => &[Stage::Features, Stage::ScenarioSirs],
            Stage::ScenarioForecast => &[Stage::Fim, Stage::AssembleScenarios],
        }
    }

    /// `target` and everything it depends on, in execution order.
    pub fn plan(target: Stage) -> Vec<Stage> {
        fn visit(s: Stage, seen: &mut Vec<Stage>) {
            for &d in s.deps() {
                visit(d, seen);
            }
            if !seen.contains(&s) {
                seen.push(s);
            }
        }
        let mut seen = Vec::new();
        visit(target, &mut seen);
        Stage::ALL.iter().copied().filter(|s| seen.contains(s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ran,
    Cached,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    pub status: Status,
    pub seconds: f64,
    pub seed: Option<u64>,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path relative to the output root to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    /// Full configuration the run used.
    pub config: String,
    pub seeds: BTreeMap<String, u64>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    fn new(cfg: &ProjectConfig) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("project".to_string(), cfg.project.seed);
        seeds.insert("fim".to_string(), cfg.fim_seed());
        seeds.insert("forecast".to_string(), cfg.forecast_seed());
        if cfg.scenario.is_some() {
            seeds.insert("scenario".to_string(), cfg.scenario_seed());
        }
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.to_toml_string(),
            seeds,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Files below `dir`, sorted, skipping dot files.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')) {
                continue;
            }
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub struct Runner<'a> {
    pub cfg: &'a ProjectConfig,
    pub out: PathBuf,
    previous: Option<Manifest>,
    pub manifest: Manifest,
    force: bool,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ProjectConfig, force: bool) -> Result<Self> {
        let out = cfg.project.output.clone();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let path = out.join(MANIFEST);
        let previous = if path.exists() {
            match Manifest::load(&path) {
                Ok(m) => Some(m),
                Err(e) => {
                    log::warn!("ignoring unreadable manifest: {e}");
                    None
                }
            }
        } else {
            None
        };
        Ok(Runner { cfg, out, previous, manifest: Manifest::new(cfg), force })
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.out).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    fn cached(&self, stage: Stage, key: &str) -> Option<StageRecord> {
        if self.force {
            return None;
        }
        let rec = self.previous.as_ref()?.stages.get(stage.name())?;
        if rec.status == Status::Failed || rec.key != key || self.dir(stage).join(FAILED_MARKER).exists() {
            return None;
        }
        for (rel, hash) in &rec.artifacts {
            match file_hash(&self.out.join(rel)) {
                Ok(h) if &h == hash => {}
                _ => return None,
            }
        }
        Some(rec.clone())
    }

    /// Runs `body` in the stage directory unless a fresh cached result
    /// exists. `inputs` lists every file the stage reads.
    pub fn run<F>(&mut self, stage: Stage, settings: serde_json::Value, inputs: &[PathBuf], seed: Option<u64>, body: F) -> Result<Status>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(self.relative(p), file_hash(p)?);
        }
        let key_text = serde_json::json!({ "stage": stage.name(), "settings": settings, "seed": seed, "inputs": hashes });
        let key = sha256_hex(key_text.to_string().as_bytes());
        let manifest_path = self.out.join(MANIFEST);

        if let Some(rec) = self.manifest.stages.get(stage.name()) {
            if rec.key == key && rec.status != Status::Failed {
                return Ok(rec.status);
            }
        }
        if let Some(mut rec) = self.cached(stage, &key) {
            log::info!("{}: up to date", stage.name());
            rec.status = Status::Cached;
            rec.seconds = 0.0;
            self.manifest.stages.insert(stage.name().to_string(), rec);
            self.manifest.save(&manifest_path)?;
            return Ok(Status::Cached);
        }

        log::info!("{}: running", stage.name());
        let dir = self.dir(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let provenance = serde_json::json!({
            "stage": stage.name(),
            "key": key,
            "config_hash": self.manifest.config_hash,
            "seed": seed,
            "settings": settings,
            "inputs": hashes,
        });
        let prov_path = dir.join(PROVENANCE);
        std::fs::write(&prov_path, serde_json::to_string_pretty(&provenance).expect("json"))
            .map_err(|e| Error::io(&prov_path, e))?;

        let start = Instant::now();
        let outcome = body(&dir);
        let seconds = start.elapsed().as_secs_f64();
        let mut artifacts = BTreeMap::new();
        for f in list_files(&dir)? {
            artifacts.insert(self.relative(&f), file_hash(&f)?);
        }
        let status = if outcome.is_ok() { Status::Ran } else { Status::Failed };
        let error = outcome.as_ref().err().map(|e| e.to_string());
        if let Some(msg) = &error {
            let marker = dir.join(FAILED_MARKER);
            std::fs::write(&marker, format!("{msg}\n")).map_err(|e| Error::io(&marker, e))?;
        }
        self.manifest
            .stages
            .insert(stage.name().to_string(), StageRecord { key, status, seconds, seed, inputs: hashes, artifacts, error });
        self.manifest.save(&manifest_path)?;
        outcome.map(|_| status)
    }
}
