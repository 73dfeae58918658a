//! Finite-difference check of the full training objective.
//!
//! The network is piecewise smooth: PReLU, `|.|` and `max` have kinks. A
//! central difference whose stencil straddles one of them measures a secant
//! across the breakpoint instead of the derivative, so such draws are
//! detected (by comparing which side of its breakpoint every kink input sits
//! on) and replaced by fresh ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::network::forward_prepared;
use super::{loss, Batch, Dcnet};
use crate::data::upsample_ms;
use crate::engine::{tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One compared scalar parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs()
            / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub samples: Vec<GradSample>,
    /// Draws replaced because their stencil crossed a kink.
    pub rejected: usize,
}

impl GradientCheck {
    pub fn max_relative_error(&self, floor: f64) -> f64 {
        self.samples
            .iter()
            .map(|s| s.relative_error(floor))
            .fold(0.0, f64::max)
    }
}

/// Which side of its breakpoint every PReLU, `|.|` and `max` input lies on.
pub fn kink_signature(model: &Dcnet<f64>, batch: &Batch<'_, f64>) -> Result<Vec<bool>> {
    let p = model.params.bind(true);
    let y = forward_prepared(
        &p,
        &model.config,
        &Var::constant(batch.pan.clone()),
        &Var::constant(batch.ms_up.clone()),
        None,
    )?;
    let l = loss(
        &y,
        &Var::constant(batch.truth.clone()),
        &p,
        model.config.lambda,
    )?;
    let mut signs = Vec::new();
    for node in tape(&l.total) {
        let inputs = node.parents();
        match node.op_name() {
            "prelu" | "abs" => signs.extend(inputs[0].value().data().iter().map(|&v| v > 0.0)),
            "maximum" => signs.extend(
                inputs[0]
                    .value()
                    .data()
                    .iter()
                    .zip(inputs[1].value().data())
                    .map(|(a, b)| a >= b),
            ),
            _ => {}
        }
    }
    Ok(signs)
}

/// Compares tape gradients with central differences of step `eps` on
/// `samples` randomly drawn scalar parameters of a freshly initialized
/// model on a random `size`² input.
///
/// Biases and slopes are jittered off their initial values and the target
/// sits 0.5 away from the prediction, so every parameter kind carries a
/// nonzero gradient and the L1 term stays away from its own kink.
pub fn gradient_check(
    cfg: &ModelConfig,
    size: usize,
    samples: usize,
    eps: f64,
    seed: u64,
) -> Result<GradientCheck> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Dcnet::<f64>::new(cfg.clone(), seed)?;
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".bias") || name.ends_with(".slope") {
            *t = Tensor::from_fn(t.shape(), |i| t.data()[i] + r.gen_range(-0.1..0.1));
        }
    }
    let pan = Tensor::from_fn(&[1, 1, size, size], |_| r.gen_range(0.0..1.0));
    let ms = Tensor::from_fn(&[1, cfg.bands, size / 4, size / 4], |_| {
        r.gen_range(0.0..1.0)
    });
    let ms_up = upsample_ms(&ms)?;
    let base = model.predict_prepared(&pan, &ms_up)?;
    let truth = Tensor::from_fn(base.shape(), |i| {
        base.data()[i] + if r.gen_bool(0.5) { 0.5 } else { -0.5 }
    });
    let batch = Batch {
        pan: &pan,
        ms_up: &ms_up,
        truth: &truth,
    };
    model.loss_and_grads(&batch)?;
    let reference = kink_signature(&model, &batch)?;

    let names: Vec<String> = model.params.names().map(String::from).collect();
    let mut out = GradientCheck {
        samples: Vec::new(),
        rejected: 0,
    };
    while out.samples.len() < samples {
        if out.rejected >= 50 * samples.max(1) {
            return Err(Error::Config(format!(
                "{} draws straddled a kink; the check point is too rough",
                out.rejected
            )));
        }
        let name = &names[r.gen_range(0..names.len())];
        let x = model.params.get(name)?.clone();
        let index = r.gen_range(0..x.len());
        let mut probe = model.clone();
        let mut at = |d: f64| -> Result<(f64, bool)> {
            let mut t = x.clone();
            t.data_mut()[index] += d;
            *probe.params.get_mut(name)? = t;
            let value = probe.evaluate_loss(&batch)?.total;
            Ok((value, kink_signature(&probe, &batch)? == reference))
        };
        let (plus, smooth_plus) = at(eps)?;
        let (minus, smooth_minus) = at(-eps)?;
        if !(smooth_plus && smooth_minus) {
            out.rejected += 1;
            continue;
        }
        let analytic = model
            .params
            .grad(name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?
            .data()[index];
        out.samples.push(GradSample {
            name: name.clone(),
            index,
            analytic,
            numeric: (plus - minus) / (2.0 * eps),
        });
    }
    Ok(out)
}
