//! Declarative experiment configuration.
//!
//! A config is JSON. The `model` object may name a `preset` (`tiny`,
//! `ikonos`, `worldview2`) and override single fields of it. Command-line
//! flags are applied as JSON patches on top of the file before
//! deserialization, so a flag always wins over the file.

use std::path::{Path, PathBuf};

use dcnet_core::data::SplitFractions;
use dcnet_core::model::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::base_lr")]
    pub base_lr: f64,
    /// Weight of the squared-weight penalty; copied into the model config.
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    /// Seeds initialization, patch splitting and batch order.
    pub seed: u64,
    #[serde(default = "defaults::precision")]
    pub precision: Precision,
    /// Wall-clock budget. Training stops after the epoch that exceeds it.
    #[serde(default)]
    pub max_seconds: Option<f64>,
    /// Epochs between resumable snapshots; the last epoch always writes one.
    #[serde(default = "defaults::checkpoint_every")]
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "defaults::split")]
    pub split: SplitFractions,
    #[serde(default = "defaults::patch_size")]
    pub patch_size: usize,
    /// Grid stride; defaults to the patch size.
    #[serde(default)]
    pub stride: Option<usize>,
}

impl DataConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.patch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Simulated scenes, each degraded by the Wald protocol.
    Synth(SynthSpec),
    /// A directory of scene archives as written by `degrade`.
    Scenes(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "defaults::count")]
    pub count: usize,
    /// Extent of the reference MS, which is also the training PAN extent.
    pub height: usize,
    pub width: usize,
    /// Scene `i` uses seed `seed + i`.
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    use super::*;

    pub fn epochs() -> usize {
        200
    }
    pub fn batch_size() -> usize {
        4
    }
    pub fn base_lr() -> f64 {
        1e-3
    }
    pub fn lambda() -> f64 {
        1e-6
    }
    pub fn precision() -> Precision {
        Precision::F32
    }
    pub fn checkpoint_every() -> usize {
        10
    }
    pub fn split() -> SplitFractions {
        SplitFractions::default()
    }
    pub fn patch_size() -> usize {
        64
    }
    pub fn count() -> usize {
        1
    }
}

/// Named model presets.
pub fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "tiny" => Ok(ModelConfig::tiny()),
        "ikonos" | "gaofen2" => Ok(ModelConfig::ikonos()),
        "worldview2" => Ok(ModelConfig::worldview2()),
        _ => Err(CliError::usage(format!(
            "unknown model preset `{name}` (tiny, ikonos, gaofen2, worldview2)"
        ))),
    }
}

/// A value set at a dotted path such as `train.epochs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub path: String,
    pub value: Value,
}

impl Override {
    pub fn new(path: &str, value: impl Into<Value>) -> Self {
        Self {
            path: path.to_string(),
            value: value.into(),
        }
    }

    /// Parses `path=value`; the value is JSON when it parses as JSON and a
    /// string otherwise.
    pub fn parse(s: &str) -> Result<Self> {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("override `{s}` is not path=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        Ok(Self::new(path.trim(), value))
    }

    fn apply(&self, root: &mut Value) -> Result<()> {
        let keys: Vec<&str> = self.path.split('.').collect();
        let mut node = root;
        for key in &keys[..keys.len() - 1] {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| CliError::usage(format!("`{}` is not an object", self.path)))?;
            node = obj
                .entry(key.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
        }
        node.as_object_mut()
            .ok_or_else(|| CliError::usage(format!("`{}` is not an object", self.path)))?
            .insert(keys[keys.len() - 1].to_string(), self.value.clone());
        Ok(())
    }
}

/// Replaces a `preset` model (a string, or an object with a `preset` key)
/// by the full preset with the object's other keys laid over it. Setting
/// `levels` without `fusion_levels` fuses at every level.
fn expand_model(root: &mut Value) -> Result<()> {
    let Some(model) = root.get_mut("model") else {
        return Ok(());
    };
    let mut fields = match model.take() {
        Value::String(name) => Map::from_iter([("preset".to_string(), Value::String(name))]),
        Value::Object(m) => m,
        other => return Err(CliError::usage(format!("model must be an object, got {other}"))),
    };
    let mut full = match fields.remove("preset") {
        Some(Value::String(name)) => match serde_json::to_value(preset(&name)?)? {
            Value::Object(m) => m,
            _ => unreachable!("ModelConfig serializes to an object"),
        },
        Some(other) => return Err(CliError::usage(format!("preset must be a name, got {other}"))),
        None => Map::new(),
    };
    if let (Some(levels), false) = (fields.get("levels"), fields.contains_key("fusion_levels")) {
        let l = levels
            .as_u64()
            .ok_or_else(|| CliError::usage(format!("levels must be a count, got {levels}")))?;
        full.insert("fusion_levels".into(), Value::from((1..=l).collect::<Vec<_>>()));
    }
    full.extend(fields);
    *model = Value::Object(full);
    Ok(())
}

/// Rebases relative paths read from a config file onto the file's directory.
fn rebase_paths(root: &mut Value, base: &Path) {
    let rebase = |v: &mut Value| {
        if let Some(s) = v.as_str() {
            let p = Path::new(s);
            if p.is_relative() {
                *v = Value::String(base.join(p).to_string_lossy().into_owned());
            }
        }
    };
    if let Some(v) = root.get_mut("output_dir") {
        rebase(v);
    }
    if let Some(v) = root.pointer_mut("/data/source/scenes") {
        rebase(v);
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies `overrides` in order, and validates.
    pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<Self> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                let mut v: Value = serde_json::from_str(&text).map_err(|e| {
                    CliError::usage(format!("config {} is not valid JSON: {e}", p.display()))
                })?;
                rebase_paths(&mut v, p.parent().unwrap_or(Path::new("")));
                v
            }
            None => Value::Object(Map::new()),
        };
        Self::from_value(&mut root, overrides)
    }

    pub fn from_value(root: &mut Value, overrides: &[Override]) -> Result<Self> {
        if !root.is_object() {
            return Err(CliError::usage("config must be a JSON object"));
        }
        expand_model(root)?;
        for o in overrides {
            o.apply(root)?;
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(root.clone())
            .map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        cfg.model.lambda = cfg.train.lambda;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || t.checkpoint_every == 0 {
            return Err(CliError::usage(
                "epochs, batch_size and checkpoint_every must be positive",
            ));
        }
        if !(t.base_lr > 0.0 && t.base_lr.is_finite()) {
            return Err(CliError::usage(format!("base_lr {} must be positive", t.base_lr)));
        }
        if t.max_seconds.is_some_and(|s| !(s > 0.0)) {
            return Err(CliError::usage("max_seconds must be positive"));
        }
        let d = &self.data;
        if d.patch_size == 0 || d.stride() == 0 {
            return Err(CliError::usage("patch_size and stride must be positive"));
        }
        d.split.counts(1)?;
        match &d.source {
            DataSource::Scenes(dir) if !dir.is_dir() => Err(CliError::usage(format!(
                "scene directory {} does not exist",
                dir.display()
            ))),
            DataSource::Synth(s) if s.count == 0 => {
                Err(CliError::usage("synth count must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON with every path blanked, so that the
    /// same experiment hashes alike wherever it runs.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        if let DataSource::Scenes(p) = &mut c.data.source {
            *p = PathBuf::new();
        }
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
