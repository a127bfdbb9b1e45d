//! Run configuration: one JSON document with a section per pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sartol::autonet::TrainConfig;
use sartol::pipeline::{DatasetConfig, EvalConfig, ExperimentConfig};
use sartol::synthscene::SceneConfig;
use sartol::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_scenes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_scenes: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub t_max: Vec<u32>,
    pub lambda: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            t_max: vec![0, 1, 2, 4, 8],
            lambda: vec![1.0],
        }
    }
}

/// File locations. Relative paths resolve against the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Output directory of every command.
    pub out: PathBuf,
    /// Scene manifest written by `synth` (read by `tile` and `sweep`).
    pub manifest: Option<PathBuf>,
    /// Road vector file (`gt`).
    pub roads: Option<PathBuf>,
    /// Validity mask PGM (`gt`, `eval`); all pixels valid when absent.
    pub valid: Option<PathBuf>,
    /// Patch directory written by `tile` (`train`).
    pub patches: Option<PathBuf>,
    /// Model checkpoint (`predict`).
    pub checkpoint: Option<PathBuf>,
    /// Image PGM to segment (`predict`).
    pub image: Option<PathBuf>,
    /// Prediction PGM (`eval`).
    pub prediction: Option<PathBuf>,
    /// Binary road mask PGM (`eval`).
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub synth: SynthConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.dataset.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.sweep.t_max.is_empty() {
            return Err(Error::config("sweep.t_max", "must list at least one value"));
        }
        if self.sweep.lambda.is_empty() {
            return Err(Error::config("sweep.lambda", "must list at least one value"));
        }
        if let Some(l) = self.sweep.lambda.iter().find(|l| !(**l >= 1.0 && l.is_finite())) {
            return Err(Error::config("sweep.lambda", format!("{l} is below 1 or not finite")));
        }
        if self.io.out.as_os_str().is_empty() {
            return Err(Error::config("io.out", "output directory is required"));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            scene: self.scene.clone(),
            n_scenes: self.synth.n_scenes,
            dataset: self.dataset.clone(),
            train: self.train.clone(),
            eval: self.eval.clone(),
        }
    }

    /// Reads a config file and applies `key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let mut doc: Value =
            serde_json::from_str(&text).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        // fill defaults first so overrides may target keys the file omits
        let base: RunConfig = from_value(doc.clone())?;
        let mut full = serde_json::to_value(&base).expect("config serializes");
        merge(&mut full, std::mem::take(&mut doc));
        for o in overrides {
            apply_override(&mut full, o)?;
        }
        let cfg = from_value(full)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn from_value(v: Value) -> Result<RunConfig> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let key = e.path().to_string();
        Error::config(if key == "." { "config".into() } else { key }, e.into_inner().to_string())
    })
}

fn merge(into: &mut Value, from: Value) {
    match (into, from) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                match a.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`; the value is parsed as JSON, or taken as a string when it
/// is not valid JSON. The key must already exist.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("--override", format!("`{spec}` is not key=value")))?;
    let mut node = &mut *doc;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| Error::config(key, "no such configuration key"))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
