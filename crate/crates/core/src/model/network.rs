//! Forward graph: two backbones, level-wise fusion and reconstruction.
//!
//! Layouts: planar features are `[n, B*C, H, W]`, volumetric features are
//! `[n, C, B, H, W]` with bands on the depth axis. Channel `c * B + b` of a
//! planar map is voxel `(c, b)` of the matching volume, so the two views are
//! plain reshapes of each other.

use super::config::{Backbone, FusionOp, ModelConfig, Projection};
use super::init::{GATES, PEEPHOLE_GATES};
use crate::data::scene::{upsample_ms, RATIO};
use crate::engine::ops;
use crate::engine::{ConvSpec, Var};
use crate::error::{Error, Result};
use crate::params::Bindings;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Named intermediate shapes recorded during a forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl Trace {
    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_slice())
    }
}

fn record<T: Real>(trace: &mut Option<&mut Trace>, name: impl Into<String>, v: &Var<T>) {
    if let Some(t) = trace {
        t.entries.push((name.into(), v.shape().to_vec()));
    }
}

/// `[n, B*C, h, w] -> [n, C, B, h, w]`.
pub fn to_volume<T: Real>(x: &Var<T>, cfg: &ModelConfig) -> Result<Var<T>> {
    let s = x.shape();
    if s.len() != 4 || s[1] != cfg.bands * cfg.channels {
        return Err(Error::dim(
            "to_volume",
            "channel",
            cfg.bands * cfg.channels,
            format!("{s:?}"),
        ));
    }
    ops::reshape(x, &[s[0], cfg.channels, cfg.bands, s[2], s[3]])
}

/// `[n, C, B, h, w] -> [n, C*B, h, w]`.
pub fn to_planar<T: Real>(x: &Var<T>) -> Result<Var<T>> {
    let s = x.shape();
    if s.len() != 5 {
        return Err(Error::dim("to_planar", "rank", 5, s.len()));
    }
    ops::reshape(x, &[s[0], s[1] * s[2], s[3], s[4]])
}

fn same3(k: usize) -> ConvSpec {
    ConvSpec::same([k; 3])
}

fn conv2d_same<T: Real>(p: &Bindings<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let k = w.shape()[2];
    ops::conv2d(x, w, Some(p.get(&format!("{prefix}.bias"))?), 1, k / 2, 1)
}

fn conv3d_same<T: Real>(p: &Bindings<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let k = w.shape()[2];
    ops::conv3d(x, w, Some(p.get(&format!("{prefix}.bias"))?), same3(k))
}

fn conv_same<T: Real>(p: &Bindings<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    if x.shape().len() == 4 {
        conv2d_same(p, prefix, x)
    } else {
        conv3d_same(p, prefix, x)
    }
}

fn act<T: Real>(p: &Bindings<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    ops::prelu(x, p.get(&format!("{prefix}.slope"))?)
}

/// PAN `[n, 1, H, W]` to planar features `[n, B*C, H, W]`.
pub fn spatial_stem<T: Real>(p: &Bindings<T>, pan: &Var<T>) -> Result<Var<T>> {
    let s = pan.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::dim(
            "spatial_stem",
            "band",
            "[n, 1, H, W]",
            format!("{s:?}"),
        ));
    }
    act(
        p,
        "spatial.stem.act",
        &conv2d_same(p, "spatial.stem.conv", pan)?,
    )
}

/// Upsampled MS `[n, B, H, W]` to spectral features: `[n, C, B, H, W]`, or
/// `[n, B*C, H, W]` for the planar backbone.
pub fn spectral_stem<T: Real>(
    p: &Bindings<T>,
    cfg: &ModelConfig,
    ms_up: &Var<T>,
) -> Result<Var<T>> {
    let s = ms_up.shape();
    if s.len() != 4 || s[1] != cfg.bands {
        return Err(Error::dim(
            "spectral_stem",
            "band",
            cfg.bands,
            format!("{s:?}"),
        ));
    }
    let x = match cfg.backbone {
        Backbone::Planar3d => ops::reshape(ms_up, &[s[0], 1, s[1], s[2], s[3]])?,
        Backbone::Planar2d => ms_up.clone(),
    };
    act(
        p,
        "spectral.stem.act",
        &conv_same(p, "spectral.stem.conv", &x)?,
    )
}

/// `x + PReLU(conv(PReLU(conv(x))))`, planar.
pub fn residual2d<T: Real>(p: &Bindings<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    if x.shape().len() != 4 {
        return Err(Error::dim("residual2d", "rank", 4, x.shape().len()));
    }
    residual(p, prefix, x)
}

/// `x + PReLU(conv(PReLU(conv(x))))`, volumetric.
pub fn residual3d<T: Real>(p: &Bindings<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    if x.shape().len() != 5 {
        return Err(Error::dim("residual3d", "rank", 5, x.shape().len()));
    }
    residual(p, prefix, x)
}

fn residual<T: Real>(p: &Bindings<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let h = act(
        p,
        &format!("{prefix}.act0"),
        &conv_same(p, &format!("{prefix}.conv0"), x)?,
    )?;
    let h = act(
        p,
        &format!("{prefix}.act1"),
        &conv_same(p, &format!("{prefix}.conv1"), &h)?,
    )?;
    ops::add(x, &h)
}

/// Hidden and cell state carried from level to level, `[n, C, B, h, w]`.
#[derive(Clone)]
pub struct ClstmState<T: Real> {
    pub hidden: Var<T>,
    pub cell: Var<T>,
}

impl<T: Real> ClstmState<T> {
    pub fn zeros(batch: usize, cfg: &ModelConfig, height: usize, width: usize) -> Self {
        let shape = [batch, cfg.channels, cfg.bands, height, width];
        Self {
            hidden: Var::constant(Tensor::zeros(&shape)),
            cell: Var::constant(Tensor::zeros(&shape)),
        }
    }
}

/// Gate activations of one cell step.
#[derive(Clone)]
pub struct Gates<T: Real> {
    pub input: Var<T>,
    pub candidate: Var<T>,
    pub forget: Var<T>,
    pub output: Var<T>,
}

/// Result of one cell step: feedback for both channels and the new state.
#[derive(Clone)]
pub struct ClstmStep<T: Real> {
    pub to_spatial: Var<T>,
    pub to_spectral: Var<T>,
    pub state: ClstmState<T>,
    pub gates: Gates<T>,
}

/// Planar map to a volume through the configured projection. `weight` is
/// `[C', C, k, k, k]` for reshape or `[B*C, C', B, k, k]` for deconv.
fn project<T: Real>(
    cfg: &ModelConfig,
    x: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
) -> Result<Var<T>> {
    let k = cfg.kernel;
    match cfg.projection {
        Projection::Reshape => ops::conv3d(&to_volume(x, cfg)?, weight, bias, same3(k)),
        Projection::Deconv => {
            let s = x.shape();
            let flat = ops::reshape(x, &[s[0], s[1], 1, s[2], s[3]])?;
            let spec = ConvSpec {
                stride: [1; 3],
                padding: [0, k / 2, k / 2],
                groups: 1,
            };
            ops::conv_transpose3d(&flat, weight, bias, spec, None)
        }
    }
}

/// One step of the spatial-spectral convolutional LSTM.
///
/// `fp` is the planar spatial feature, `fm` the spectral volume. All four
/// gates see both features and the previous hidden state; input and forget
/// gates also see the previous cell state, the output gate the new one,
/// through per-channel (depthwise) peepholes.
pub fn s2clstm_step<T: Real>(
    p: &Bindings<T>,
    cfg: &ModelConfig,
    fp: &Var<T>,
    fm: &Var<T>,
    state: &ClstmState<T>,
) -> Result<ClstmStep<T>> {
    let c = cfg.channels;
    if fm.shape() != state.hidden.shape() || fm.shape() != state.cell.shape() {
        return Err(Error::ShapeMismatch {
            op: "s2clstm_step",
            lhs: fm.shape().to_vec(),
            rhs: state.hidden.shape().to_vec(),
        });
    }
    let stacked = |part: &str, axis: usize| -> Result<Var<T>> {
        let ws = GATES
            .iter()
            .map(|g| p.get(&format!("fusion.{g}.{part}.weight")).cloned())
            .collect::<Result<Vec<_>>>()?;
        ops::concat(&ws, axis)
    };
    let proj_axis = match cfg.projection {
        Projection::Reshape => 0,
        Projection::Deconv => 1,
    };
    let bias = ops::concat(
        &GATES
            .iter()
            .map(|g| p.get(&format!("fusion.{g}.bias")).cloned())
            .collect::<Result<Vec<_>>>()?,
        0,
    )?;
    let k = cfg.kernel;
    let from_p = project(cfg, fp, &stacked("proj", proj_axis)?, None)?;
    let from_m = ops::conv3d(fm, &stacked("ms", 0)?, Some(&bias), same3(k))?;
    let from_h = ops::conv3d(&state.hidden, &stacked("hidden", 0)?, None, same3(k))?;
    if from_p.shape() != from_m.shape() {
        return Err(Error::ShapeMismatch {
            op: "s2clstm_step",
            lhs: from_p.shape().to_vec(),
            rhs: from_m.shape().to_vec(),
        });
    }
    let pre = ops::split(&ops::add_all(&[from_p, from_m, from_h])?, 1, &[c; 4])?;

    let peep = |gate: &str, cell: &Var<T>| -> Result<Var<T>> {
        debug_assert!(PEEPHOLE_GATES.contains(&gate));
        let w = p.get(&format!("fusion.{gate}.peep.weight"))?;
        ops::conv3d(cell, w, None, ConvSpec::uniform(1, 0).with_groups(c))
    };
    let input = ops::sigmoid(&ops::add(&pre[0], &peep("input", &state.cell)?)?);
    let candidate = ops::tanh(&pre[1]);
    let forget = ops::sigmoid(&ops::add(&pre[2], &peep("forget", &state.cell)?)?);
    let cell = ops::add(
        &ops::mul(&forget, &state.cell)?,
        &ops::mul(&input, &candidate)?,
    )?;
    let output = ops::sigmoid(&ops::add(&pre[3], &peep("output", &cell)?)?);
    let hidden = ops::mul(&output, &ops::tanh(&cell))?;

    Ok(ClstmStep {
        to_spatial: to_planar(&hidden)?,
        to_spectral: hidden.clone(),
        state: ClstmState { hidden, cell },
        gates: Gates {
            input,
            candidate,
            forget,
            output,
        },
    })
}

/// Parameter-free (or 1x1x1 conv) fusion of the spatial map, viewed as a
/// volume, with the spectral volume.
pub fn alt_fusion<T: Real>(
    p: &Bindings<T>,
    cfg: &ModelConfig,
    kind: FusionOp,
    fp: &Var<T>,
    fm: &Var<T>,
) -> Result<Var<T>> {
    let pv = to_volume(fp, cfg)?;
    match kind {
        FusionOp::Sum => ops::add(&pv, fm),
        FusionOp::Max => ops::maximum(&pv, fm),
        FusionOp::Average => Ok(ops::scale(&ops::add(&pv, fm)?, T::from_f64_lossy(0.5))),
        FusionOp::Product => ops::mul(&pv, fm),
        FusionOp::Conv => {
            let cat = ops::concat(&[pv, fm.clone()], 1)?;
            ops::conv3d(
                &cat,
                p.get("fusion.mix.weight")?,
                Some(p.get("fusion.mix.bias")?),
                ConvSpec::uniform(1, 0),
            )
        }
        FusionOp::S2clstm => Err(Error::Config("s2clstm is not an elementwise fusion".into())),
    }
}

/// Features leaving level `l`.
#[derive(Clone)]
pub struct LevelOutput<T: Real> {
    pub spatial: Var<T>,
    pub spectral: Var<T>,
    pub state: ClstmState<T>,
}

/// Level `l` (1-based): residual blocks on both channels, then, when `l` is a
/// fusion level, the fusion operator. Below the last level its output is fed
/// back into both channels; at the last level it only updates the state.
pub fn channel_level<T: Real>(
    p: &Bindings<T>,
    cfg: &ModelConfig,
    level: usize,
    spatial_prev: &Var<T>,
    spectral_prev: &Var<T>,
    state: &ClstmState<T>,
) -> Result<LevelOutput<T>> {
    channel_level_traced(p, cfg, level, spatial_prev, spectral_prev, state, &mut None)
}

fn spectral_volume<T: Real>(cfg: &ModelConfig, x: &Var<T>) -> Result<Var<T>> {
    match cfg.backbone {
        Backbone::Planar3d => Ok(x.clone()),
        Backbone::Planar2d => to_volume(x, cfg),
    }
}

fn channel_level_traced<T: Real>(
    p: &Bindings<T>,
    cfg: &ModelConfig,
    level: usize,
    spatial_prev: &Var<T>,
    spectral_prev: &Var<T>,
    state: &ClstmState<T>,
    trace: &mut Option<&mut Trace>,
) -> Result<LevelOutput<T>> {
    let sp = residual2d(p, &format!("spatial.level{level}"), spatial_prev)?;
    let se = residual(p, &format!("spectral.level{level}"), spectral_prev)?;
    let se_vol = spectral_volume(cfg, &se)?;
    record(
        trace,
        format!("level{level}.spatial.fusion_in"),
        &to_volume(&sp, cfg)?,
    );
    record(trace, format!("level{level}.spectral.fusion_in"), &se_vol);

    if !cfg.fuses_at(level) {
        return Ok(LevelOutput {
            spatial: sp,
            spectral: se,
            state: state.clone(),
        });
    }
    let (to_spatial, to_spectral, state) = match cfg.fusion_op {
        FusionOp::S2clstm => {
            let step = s2clstm_step(p, cfg, &sp, &se_vol, state)?;
            (step.to_spatial, step.to_spectral, step.state)
        }
        kind => {
            let fused = alt_fusion(p, cfg, kind, &sp, &se_vol)?;
            let st = ClstmState {
                hidden: fused.clone(),
                cell: state.cell.clone(),
            };
            (to_planar(&fused)?, fused, st)
        }
    };
    record(
        trace,
        format!("level{level}.fusion.to_spatial"),
        &to_spatial,
    );
    record(
        trace,
        format!("level{level}.fusion.to_spectral"),
        &to_spectral,
    );
    if level == cfg.levels {
        return Ok(LevelOutput {
            spatial: sp,
            spectral: se,
            state,
        });
    }
    let to_spectral = match cfg.backbone {
        Backbone::Planar3d => to_spectral,
        Backbone::Planar2d => to_planar(&to_spectral)?,
    };
    Ok(LevelOutput {
        spatial: ops::add(&sp, &to_spatial)?,
        spectral: ops::add(&se, &to_spectral)?,
        state,
    })
}

/// Projection of the planar map, concatenation with the spectral volume and
/// the final hidden state, 1x1x1 bottleneck, one residual block and a
/// single-filter convolution whose depth axis becomes the band axis.
pub fn reconstruct<T: Real>(
    p: &Bindings<T>,
    cfg: &ModelConfig,
    spatial: &Var<T>,
    spectral: &Var<T>,
    hidden: &Var<T>,
) -> Result<Var<T>> {
    let proj = project(
        cfg,
        spatial,
        p.get("recon.proj.weight")?,
        Some(p.get("recon.proj.bias")?),
    )?;
    if proj.shape() != spectral.shape() || spectral.shape() != hidden.shape() {
        return Err(Error::ShapeMismatch {
            op: "reconstruct",
            lhs: proj.shape().to_vec(),
            rhs: hidden.shape().to_vec(),
        });
    }
    let cat = ops::concat(&[proj, spectral.clone(), hidden.clone()], 1)?;
    let w = p.get("recon.bottleneck.conv.weight")?;
    let b = p.get("recon.bottleneck.conv.bias")?;
    let bott = act(
        p,
        "recon.bottleneck.act",
        &ops::conv3d(&cat, w, Some(b), ConvSpec::uniform(1, 0))?,
    )?;
    let res = residual3d(p, "recon.res", &bott)?;
    let out = conv3d_same(p, "recon.out", &res)?;
    let s = out.shape().to_vec();
    ops::reshape(&out, &[s[0], s[2], s[3], s[4]])
}

/// Full network on a PAN batch `[n, 1, H, W]` and MS already brought to PAN
/// resolution `[n, B, H, W]`. Returns `[n, B, H, W]`.
pub fn forward_prepared<T: Real>(
    p: &Bindings<T>,
    cfg: &ModelConfig,
    pan: &Var<T>,
    ms_up: &Var<T>,
    mut trace: Option<&mut Trace>,
) -> Result<Var<T>> {
    let (ps, ms) = (pan.shape(), ms_up.shape());
    if ps.len() != 4 || ms.len() != 4 || ps[0] != ms[0] || ps[2..] != ms[2..] {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: ps.to_vec(),
            rhs: ms.to_vec(),
        });
    }
    let (n, h, w) = (ps[0], ps[2], ps[3]);
    let mut spatial = spatial_stem(p, pan)?;
    let mut spectral = spectral_stem(p, cfg, ms_up)?;
    record(&mut trace, "stem.spatial", &spatial);
    record(
        &mut trace,
        "stem.spectral",
        &spectral_volume(cfg, &spectral)?,
    );
    let mut state = ClstmState::zeros(n, cfg, h, w);
    for level in 1..=cfg.levels {
        let out = channel_level_traced(p, cfg, level, &spatial, &spectral, &state, &mut trace)?;
        spatial = out.spatial;
        spectral = out.spectral;
        state = out.state;
        if level < cfg.levels {
            record(&mut trace, format!("level{level}.spatial.out"), &spatial);
            record(
                &mut trace,
                format!("level{level}.spectral.out"),
                &spectral_volume(cfg, &spectral)?,
            );
        }
    }
    let y = reconstruct(
        p,
        cfg,
        &spatial,
        &spectral_volume(cfg, &spectral)?,
        &state.hidden,
    )?;
    record(&mut trace, "output", &y);
    Ok(y)
}

/// Full network on PAN `[n, 1, H, W]` and MS `[n, B, H/4, W/4]`.
pub fn forward<T: Real>(
    p: &Bindings<T>,
    cfg: &ModelConfig,
    pan: &Tensor<T>,
    ms: &Tensor<T>,
    trace: Option<&mut Trace>,
) -> Result<Var<T>> {
    let (ps, ms_s) = (pan.shape(), ms.shape());
    if ps.len() != 4 || ms_s.len() != 4 {
        return Err(Error::dim(
            "forward",
            "rank",
            4,
            format!("{ps:?} / {ms_s:?}"),
        ));
    }
    if ps[2] % RATIO != 0
        || ps[3] % RATIO != 0
        || ms_s[2] * RATIO != ps[2]
        || ms_s[3] * RATIO != ps[3]
    {
        return Err(Error::Ratio(format!("pan {ps:?} vs ms {ms_s:?}")));
    }
    let ms_up = Var::constant(upsample_ms(ms)?);
    forward_prepared(p, cfg, &Var::constant(pan.clone()), &ms_up, trace)
}
