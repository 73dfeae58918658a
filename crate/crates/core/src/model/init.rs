//! Parameter layout and seeded initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{Backbone, FusionOp, ModelConfig, Projection};
use crate::error::Result;
use crate::params::{ParamKind, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Gates of the fusion cell, in the order their convolutions are stacked.
pub const GATES: [&str; 4] = ["input", "candidate", "forget", "output"];

/// Gates with a per-channel peephole on the cell state.
pub const PEEPHOLE_GATES: [&str; 3] = ["input", "forget", "output"];

pub const PRELU_INIT: f64 = 0.25;

/// How a weight's initial scale is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Followed by PReLU: `sqrt(2 / ((1 + a^2) fan_in))`.
    Rectified,
    /// Feeds a gate nonlinearity or the output: `sqrt(1 / fan_in)`.
    Linear,
    /// Last convolution of a residual branch: rectified scale shrunk tenfold
    /// so every block starts close to the identity.
    Branch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub init: Init,
}

struct Layout {
    specs: Vec<ParamSpec>,
}

impl Layout {
    fn weight(&mut self, name: String, shape: Vec<usize>, init: Init) {
        let fan_in = shape[1..].iter().product();
        self.weight_with_fan_in(name, shape, fan_in, init);
    }

    fn weight_with_fan_in(&mut self, name: String, shape: Vec<usize>, fan_in: usize, init: Init) {
        self.specs.push(ParamSpec {
            name,
            shape,
            fan_in,
            init,
        });
    }

    fn vector(&mut self, name: String, len: usize) {
        self.specs.push(ParamSpec {
            name,
            shape: vec![len],
            fan_in: 0,
            init: Init::Linear,
        });
    }

    /// Convolution with bias followed by PReLU.
    fn conv_act(&mut self, prefix: &str, conv: &str, act: &str, shape: Vec<usize>) {
        let c_out = shape[0];
        self.weight(format!("{prefix}.{conv}.weight"), shape, Init::Rectified);
        self.vector(format!("{prefix}.{conv}.bias"), c_out);
        self.vector(format!("{prefix}.{act}.slope"), c_out);
    }

    fn residual(&mut self, prefix: &str, kernel: &[usize], width: usize) {
        for (i, init) in [Init::Rectified, Init::Branch].into_iter().enumerate() {
            let mut shape = vec![width, width];
            shape.extend_from_slice(kernel);
            self.weight(format!("{prefix}.conv{i}.weight"), shape, init);
            self.vector(format!("{prefix}.conv{i}.bias"), width);
            self.vector(format!("{prefix}.act{i}.slope"), width);
        }
    }
}

/// Every learnable tensor of the network for `cfg`.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (b, c, k) = (cfg.bands, cfg.channels, cfg.kernel);
    let wide = cfg.spatial_width();
    let k2 = [k, k];
    let k3 = [k, k, k];
    let mut l = Layout { specs: Vec::new() };

    l.conv_act("spatial.stem", "conv", "act", vec![wide, 1, k, k]);
    match cfg.backbone {
        Backbone::Planar3d => l.conv_act("spectral.stem", "conv", "act", vec![c, 1, k, k, k]),
        Backbone::Planar2d => l.conv_act("spectral.stem", "conv", "act", vec![b * c, b, k, k]),
    }
    for level in 1..=cfg.levels {
        l.residual(&format!("spatial.level{level}"), &k2, wide);
        match cfg.backbone {
            Backbone::Planar3d => l.residual(&format!("spectral.level{level}"), &k3, c),
            Backbone::Planar2d => l.residual(&format!("spectral.level{level}"), &k2, b * c),
        }
    }

    let projection = |l: &mut Layout, name: String, init: Init| match cfg.projection {
        Projection::Reshape => l.weight(name, vec![c, c, k, k, k], init),
        Projection::Deconv => {
            l.weight_with_fan_in(name, vec![wide, c, b, k, k], wide * k * k, init)
        }
    };
    if !cfg.fusion_levels.is_empty() {
        match cfg.fusion_op {
            FusionOp::S2clstm => {
                for gate in GATES {
                    projection(&mut l, format!("fusion.{gate}.proj.weight"), Init::Linear);
                    l.weight(
                        format!("fusion.{gate}.ms.weight"),
                        vec![c, c, k, k, k],
                        Init::Linear,
                    );
                    l.weight(
                        format!("fusion.{gate}.hidden.weight"),
                        vec![c, c, k, k, k],
                        Init::Linear,
                    );
                    l.vector(format!("fusion.{gate}.bias"), c);
                }
                for gate in PEEPHOLE_GATES {
                    l.weight(
                        format!("fusion.{gate}.peep.weight"),
                        vec![c, 1, 1, 1, 1],
                        Init::Linear,
                    );
                }
            }
            FusionOp::Conv => {
                l.weight(
                    "fusion.mix.weight".into(),
                    vec![c, 2 * c, 1, 1, 1],
                    Init::Linear,
                );
                l.vector("fusion.mix.bias".into(), c);
            }
            _ => {}
        }
    }

    projection(&mut l, "recon.proj.weight".into(), Init::Linear);
    l.vector("recon.proj.bias".into(), c);
    l.conv_act("recon.bottleneck", "conv", "act", vec![c, 3 * c, 1, 1, 1]);
    l.residual("recon.res", &k3, c);
    l.weight("recon.out.weight".into(), vec![1, c, k, k, k], Init::Linear);
    l.vector("recon.out.bias".into(), 1);
    l.specs
}

/// Fresh parameters: fan-in scaled normal weights, zero biases (forget gate
/// optionally offset), PReLU slopes at 0.25.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in param_specs(cfg) {
        let value = match ParamKind::of(&spec.name) {
            Some(ParamKind::Weight) => {
                let gain = match spec.init {
                    Init::Rectified => 2.0 / (1.0 + PRELU_INIT * PRELU_INIT),
                    Init::Linear => 1.0,
                    Init::Branch => 0.02 / (1.0 + PRELU_INIT * PRELU_INIT),
                };
                let normal =
                    Normal::new(0.0, (gain / spec.fan_in as f64).sqrt()).expect("positive std");
                Tensor::from_fn(&spec.shape, |_| T::from_f64_lossy(normal.sample(&mut rng)))
            }
            Some(ParamKind::Slope) => Tensor::full(&spec.shape, T::from_f64_lossy(PRELU_INIT)),
            _ if spec.name == "fusion.forget.bias" => {
                Tensor::full(&spec.shape, T::from_f64_lossy(cfg.forget_bias))
            }
            _ => Tensor::zeros(&spec.shape),
        };
        store.insert(spec.name, value)?;
    }
    Ok(store)
}
