//! The record a training run leaves behind.

use std::path::Path;

use dcnet_core::data::io::write_atomic;
use dcnet_core::Real;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Precision};
use crate::dataset::Dataset;
use crate::error::{Context, Result};
use crate::train::{self, EpochRecord, Evaluation, Status};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";

/// Everything here is a function of the config, the input data and the
/// seed; there are no timestamps or absolute paths, so identical runs give
/// byte-identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_sha256: String,
    pub data_sha256: String,
    pub seed: u64,
    pub precision: Precision,
    pub status: Status,
    pub epochs_run: usize,
    /// `val_l1`, or `train_l1` when there is no validation split.
    pub selection: String,
    pub best_epoch: usize,
    pub best_score: f64,
    pub loss_curve: Vec<EpochRecord>,
    pub evaluation: Evaluation,
    /// Relative to the run directory.
    pub checkpoint: String,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_slice(&std::fs::read(path).at(path)?).at(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?).at(path)
    }
}

/// Trains (or resumes) in `dir`, evaluates the best checkpoint and writes
/// `config.json` and `manifest.json` there.
pub fn run_experiment<T: Real>(
    cfg: &ExperimentConfig,
    data: &Dataset<T>,
    dir: &Path,
    resume: bool,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunManifest> {
    std::fs::create_dir_all(dir).at(dir)?;
    let config_path = dir.join(CONFIG);
    write_atomic(&config_path, &serde_json::to_vec_pretty(cfg)?).at(&config_path)?;
    let out = train::train(cfg, data, dir, resume, on_epoch)?;
    let (split, samples) = data.evaluation_split();
    let evaluation = train::evaluate(&out.best, split, samples, cfg.train.batch_size)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: cfg.content_hash(),
        data_sha256: data.sha256.clone(),
        seed: cfg.train.seed,
        precision: cfg.train.precision,
        status: out.status,
        epochs_run: out.progress.curve.len(),
        selection: if data.val.is_empty() { "train_l1" } else { "val_l1" }.to_string(),
        best_epoch: out.progress.best_epoch,
        best_score: out.progress.best_score,
        loss_curve: out.progress.curve,
        evaluation,
        checkpoint: train::BEST.to_string(),
    };
    manifest.write(&dir.join(MANIFEST))?;
    Ok(manifest)
}
