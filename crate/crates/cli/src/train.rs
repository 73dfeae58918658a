//! The training loop, its resumable snapshots and final evaluation.

use std::path::Path;
use std::time::Instant;

use dcnet_core::data::{denormalize, downsample, read_archive, write_archive};
use dcnet_core::engine::optim::{adam_step, lr_schedule, AdamConfig, AdamState};
use dcnet_core::metrics::{fit_window, MetricReport, QnrParams, WINDOW};
use dcnet_core::model::{Batch, Dcnet, LossValue};
use dcnet_core::{Real, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{stack, Dataset, Sample};
use crate::error::{CliError, Context, Result};

pub const BEST: &str = "best.pten";
pub const LAST: &str = "last.pten";
pub const ADAM: &str = "adam.pten";
pub const STATE: &str = "state.json";
pub const LOSS_CSV: &str = "loss.csv";

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's batches, weighted by batch size.
    pub train_l1: f64,
    pub train_total: f64,
    /// Mean l1 on the validation split after the epoch; absent when the
    /// split is empty.
    pub val_l1: Option<f64>,
}

impl EpochRecord {
    /// Score used to pick the best checkpoint.
    pub fn score(&self) -> f64 {
        self.val_l1.unwrap_or(self.train_l1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Completed,
    /// The wall-clock budget ran out before the last epoch.
    BudgetExhausted,
}

/// Everything needed to continue a run besides the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub resume_key: String,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub adam_step: u64,
}

pub struct TrainOutcome<T: Real> {
    pub best: Dcnet<T>,
    pub progress: Progress,
    pub status: Status,
}

/// Hash of the settings a resumed run must share with the original: all of
/// the config except the epoch count and the budget.
pub fn resume_key(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.train.epochs = 0;
    c.train.max_seconds = None;
    c.train.checkpoint_every = 1;
    c.content_hash()
}

/// Batch-size weighted mean loss of `model` over `samples`.
pub fn mean_loss<T: Real>(
    model: &Dcnet<T>,
    samples: &[Sample<T>],
    batch_size: usize,
) -> Result<LossValue> {
    let (mut l1, mut total) = (0.0, 0.0);
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&Sample<T>> = chunk.iter().collect();
        let (pan, ms_up, truth) = stack(&refs)?;
        let v = model.evaluate_loss(&Batch {
            pan: &pan,
            ms_up: &ms_up,
            truth: &truth,
        })?;
        l1 += v.l1 * chunk.len() as f64;
        total += v.total * chunk.len() as f64;
    }
    let n = samples.len() as f64;
    Ok(LossValue {
        l1: l1 / n,
        total: total / n,
    })
}

fn save_adam<T: Real>(path: &Path, state: &AdamState<T>) -> Result<()> {
    let first = state.first_moment.iter().map(|(k, v)| (format!("first/{k}"), v));
    let second = state.second_moment.iter().map(|(k, v)| (format!("second/{k}"), v));
    let entries: Vec<(String, &Tensor<T>)> = first.chain(second).collect();
    write_archive(path, entries.iter().map(|(k, v)| (k.as_str(), *v))).at(path)
}

fn load_adam<T: Real>(path: &Path, config: AdamConfig, step: u64) -> Result<AdamState<T>> {
    let mut state = AdamState::new(config);
    state.step = step;
    for (name, t) in read_archive::<T>(path).at(path)? {
        if let Some(k) = name.strip_prefix("first/") {
            state.first_moment.insert(k.to_string(), t);
        } else if let Some(k) = name.strip_prefix("second/") {
            state.second_moment.insert(k.to_string(), t);
        }
    }
    Ok(state)
}

pub fn write_loss_csv(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "lr", "train_l1", "train_total", "val_l1"])?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.train_l1.to_string(),
            r.train_total.to_string(),
            r.val_l1.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))?;
    dcnet_core::data::io::write_atomic(path, &bytes).at(path)
}

/// Trains in `dir`, continuing from the snapshot there when `resume` is set.
/// `on_epoch` sees every new curve row.
pub fn train<T: Real>(
    cfg: &ExperimentConfig,
    data: &Dataset<T>,
    dir: &Path,
    resume: bool,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    std::fs::create_dir_all(dir).at(dir)?;
    let t = &cfg.train;
    let adam_config = AdamConfig {
        lr: t.base_lr,
        ..AdamConfig::default()
    };
    let key = resume_key(cfg);
    let (mut model, mut adam, mut progress) = if resume {
        let state_path = dir.join(STATE);
        let progress: Progress =
            serde_json::from_slice(&std::fs::read(&state_path).at(&state_path)?).at(&state_path)?;
        if progress.resume_key != key {
            return Err(CliError::usage(format!(
                "{} was written by a different experiment configuration",
                state_path.display()
            )));
        }
        let model = Dcnet::<T>::load(dir.join(LAST)).at(dir.join(LAST))?;
        let adam = load_adam(&dir.join(ADAM), adam_config, progress.adam_step)?;
        (model, adam, progress)
    } else {
        let progress = Progress {
            resume_key: key,
            curve: Vec::new(),
            best_epoch: 0,
            best_score: f64::INFINITY,
            adam_step: 0,
        };
        (
            Dcnet::<T>::new(cfg.model.clone(), t.seed)?,
            AdamState::new(adam_config),
            progress,
        )
    };
    let mut best = if resume && dir.join(BEST).exists() {
        Dcnet::<T>::load(dir.join(BEST)).at(dir.join(BEST))?
    } else {
        model.clone()
    };

    let started = Instant::now();
    let mut status = Status::Completed;
    let first = progress.curve.len();
    for epoch in first..t.epochs {
        let lr = lr_schedule(epoch, t.base_lr);
        adam.set_lr(lr);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let (mut l1, mut total) = (0.0, 0.0);
        for idx in order.chunks(t.batch_size) {
            let refs: Vec<&Sample<T>> = idx.iter().map(|&i| &data.train[i]).collect();
            let (pan, ms_up, truth) = stack(&refs)?;
            let v = model.loss_and_grads(&Batch {
                pan: &pan,
                ms_up: &ms_up,
                truth: &truth,
            })?;
            adam_step(&mut model.params, &mut adam)?;
            l1 += v.l1 * idx.len() as f64;
            total += v.total * idx.len() as f64;
        }
        let n = data.train.len() as f64;
        let val_l1 = if data.val.is_empty() {
            None
        } else {
            Some(mean_loss(&model, &data.val, t.batch_size)?.l1)
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_l1: l1 / n,
            train_total: total / n,
            val_l1,
        };
        if !record.score().is_finite() || !record.train_total.is_finite() {
            return Err(dcnet_core::Error::NonFinite(format!("loss at epoch {}", epoch + 1)).into());
        }
        on_epoch(&record);
        progress.curve.push(record);
        if record.score() < progress.best_score {
            progress.best_score = record.score();
            progress.best_epoch = record.epoch;
            best = model.clone();
            best.save(dir.join(BEST)).at(dir.join(BEST))?;
        }
        progress.adam_step = adam.step;

        let last = epoch + 1 == t.epochs;
        let over_budget = t
            .max_seconds
            .is_some_and(|s| started.elapsed().as_secs_f64() > s);
        if over_budget && !last {
            status = Status::BudgetExhausted;
        }
        if last || over_budget || (epoch + 1) % t.checkpoint_every == 0 {
            snapshot(dir, &model, &adam, &progress)?;
        }
        if over_budget {
            break;
        }
    }
    if progress.curve.len() == first && first > 0 {
        // resumed a run that had already finished
        snapshot(dir, &model, &adam, &progress)?;
    }
    Ok(TrainOutcome {
        best,
        progress,
        status,
    })
}

fn snapshot<T: Real>(
    dir: &Path,
    model: &Dcnet<T>,
    adam: &AdamState<T>,
    progress: &Progress,
) -> Result<()> {
    model.save(dir.join(LAST)).at(dir.join(LAST))?;
    save_adam(&dir.join(ADAM), adam)?;
    write_loss_csv(&dir.join(LOSS_CSV), &progress.curve)?;
    let state = dir.join(STATE);
    dcnet_core::data::io::write_atomic(&state, &serde_json::to_vec_pretty(progress)?).at(&state)
}

/// Final metrics of a model on one split, in the scenes' native units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub split: String,
    pub patches: usize,
    pub window: usize,
    /// Mean normalized l1 of the fused patches.
    pub l1: f64,
    pub mean: MetricReport,
}

/// Sharpens each sample and averages full-reference and QNR metrics.
pub fn evaluate<T: Real>(
    model: &Dcnet<T>,
    split: &str,
    samples: &[Sample<T>],
    batch_size: usize,
) -> Result<Evaluation> {
    let first = samples
        .first()
        .ok_or_else(|| CliError::usage(format!("{split} split is empty")))?;
    let (h, w) = (first.truth.shape()[1], first.truth.shape()[2]);
    let window = fit_window(WINDOW, h, w);
    let qnr = QnrParams {
        window,
        ..QnrParams::default()
    };
    let ratio = dcnet_core::data::RATIO;
    let mut reports = Vec::with_capacity(samples.len());
    for s in samples {
        let fused = model.predict_prepared(
            &s.pan.reshape(&[1, 1, h, w])?,
            &s.ms_up.reshape(&[1, s.truth.shape()[0], h, w])?,
        )?;
        let fused = denormalize(&fused.into_reshaped(s.truth.shape())?, s.range)?;
        if !fused.all_finite() {
            return Err(dcnet_core::Error::NonFinite("sharpened output".into()).into());
        }
        let truth = denormalize(&s.truth, s.range)?;
        let ms = denormalize(&s.ms, s.range)?;
        let pan = denormalize(&s.pan, s.range)?.into_reshaped(&[h, w])?;
        let pan_low = downsample(&pan)?;
        let full = MetricReport::full_reference(&fused, &truth, ratio, window)?;
        reports.push(full.with_qnr(qnr.evaluate(&fused, &ms, &pan, &pan_low)?));
    }
    Ok(Evaluation {
        split: split.to_string(),
        patches: samples.len(),
        window,
        l1: mean_loss(model, samples, batch_size)?.l1,
        mean: MetricReport::mean(&reports)?,
    })
}
