//! The dual-channel network: configuration, parameters, forward graph,
//! objective and checkpoints.

pub mod config;
pub mod gradcheck;
pub mod init;
pub mod network;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{Backbone, FusionOp, ModelConfig, Projection};
pub use gradcheck::{gradient_check, GradSample, GradientCheck};
pub use init::{init_params, param_specs};
pub use network::{
    alt_fusion, channel_level, forward, forward_prepared, reconstruct, residual2d, residual3d,
    s2clstm_step, spatial_stem, spectral_stem, ClstmState, ClstmStep, Gates, LevelOutput, Trace,
};

use crate::data::io::{read_archive, write_archive, write_atomic};
use crate::engine::{backward, ops, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamKind, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// The two terms of the objective.
pub struct Loss<T: Real> {
    pub total: Var<T>,
    pub l1: Var<T>,
}

/// Mean absolute error plus `lambda` times the sum of squared convolution
/// weights (biases and PReLU slopes are not penalized).
pub fn loss<T: Real>(y_hat: &Var<T>, y: &Var<T>, p: &Bindings<T>, lambda: f64) -> Result<Loss<T>> {
    if y_hat.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: y_hat.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let l1 = ops::mean(&ops::abs(&ops::sub(y_hat, y)?));
    if lambda == 0.0 {
        return Ok(Loss {
            total: l1.clone(),
            l1,
        });
    }
    let squares = p
        .iter()
        .filter(|(name, _)| ParamKind::of(name) == Some(ParamKind::Weight))
        .map(|(_, w)| ops::mul(w, w).map(|sq| ops::sum(&sq)))
        .collect::<Result<Vec<_>>>()?;
    let penalty = ops::scale(&ops::add_all(&squares)?, T::from_f64_lossy(lambda));
    Ok(Loss {
        total: ops::add(&l1, &penalty)?,
        l1,
    })
}

/// Loss values of one evaluated batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub l1: f64,
    pub total: f64,
}

/// One training batch: PAN `[n, 1, H, W]`, MS at PAN resolution
/// `[n, B, H, W]`, reference `[n, B, H, W]`.
pub struct Batch<'a, T: Real> {
    pub pan: &'a Tensor<T>,
    pub ms_up: &'a Tensor<T>,
    pub truth: &'a Tensor<T>,
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Dcnet<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Dcnet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Inference without a gradient tape: intermediate values are freed as
    /// soon as they are consumed.
    pub fn predict(&self, pan: &Tensor<T>, ms: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.params.bind(false);
        Ok(forward(&p, &self.config, pan, ms, None)?.value().clone())
    }

    pub fn predict_prepared(&self, pan: &Tensor<T>, ms_up: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.params.bind(false);
        let y = forward_prepared(
            &p,
            &self.config,
            &Var::constant(pan.clone()),
            &Var::constant(ms_up.clone()),
            None,
        )?;
        Ok(y.value().clone())
    }

    /// Intermediate shapes of a no-grad forward pass.
    pub fn trace(&self, pan: &Tensor<T>, ms: &Tensor<T>) -> Result<Trace> {
        let p = self.params.bind(false);
        let mut trace = Trace::default();
        forward(&p, &self.config, pan, ms, Some(&mut trace))?;
        Ok(trace)
    }

    pub fn evaluate_loss(&self, batch: &Batch<'_, T>) -> Result<LossValue> {
        let p = self.params.bind(false);
        self.loss_on(&p, batch).map(|l| value_of(&l))
    }

    /// Forward and backward on one batch; gradients land in `self.params`.
    pub fn loss_and_grads(&mut self, batch: &Batch<'_, T>) -> Result<LossValue> {
        let p = self.params.bind(true);
        let l = self.loss_on(&p, batch)?;
        let value = value_of(&l);
        if !value.total.is_finite() {
            return Err(Error::NonFinite(format!("loss {}", value.total)));
        }
        backward(&l.total)?;
        self.params.absorb_grads(&p)?;
        Ok(value)
    }

    fn loss_on(&self, p: &Bindings<T>, batch: &Batch<'_, T>) -> Result<Loss<T>> {
        let y_hat = forward_prepared(
            p,
            &self.config,
            &Var::constant(batch.pan.clone()),
            &Var::constant(batch.ms_up.clone()),
            None,
        )?;
        loss(
            &y_hat,
            &Var::constant(batch.truth.clone()),
            p,
            self.config.lambda,
        )
    }

    /// Writes the parameter archive to `path` and the configuration to
    /// [`config_sidecar`]`(path)`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_archive(path, self.params.iter())?;
        write_atomic(
            &config_sidecar(path),
            serde_json::to_string_pretty(&Sidecar {
                model: self.config.clone(),
            })?
            .as_bytes(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar: Sidecar = serde_json::from_slice(&std::fs::read(config_sidecar(path))?)?;
        let config = sidecar.model;
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, t) in read_archive(path)? {
            params.insert(name, t)?;
        }
        let expected = param_specs(&config);
        if expected.len() != params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, configuration needs {}",
                params.len(),
                expected.len()
            )));
        }
        for spec in expected {
            let t = params.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "load",
                    lhs: spec.shape,
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, params })
    }
}

fn value_of<T: Real>(l: &Loss<T>) -> LossValue {
    LossValue {
        l1: l.l1.value().item().to_f64_lossy(),
        total: l.total.value().item().to_f64_lossy(),
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    model: ModelConfig,
}

/// `model.pten` -> `model.pten.json`.
pub fn config_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
