mod common;

use std::collections::BTreeSet;

use common::{rng, uniform};
use dcnet_core::engine::conv::{self, ConvSpec};
use dcnet_core::engine::Var;
use dcnet_core::model::network::{to_planar, to_volume};
use dcnet_core::model::*;
use dcnet_core::{ParamStore, Tensor};

fn zeroed(store: &ParamStore<f64>) -> ParamStore<f64> {
    let mut z = store.clone();
    for (name, t) in z.iter_mut() {
        if name.ends_with(".weight") || name.ends_with(".bias") {
            *t = Tensor::zeros(t.shape());
        }
    }
    z
}

fn prelu_ref(x: &Tensor<f64>, slope: &Tensor<f64>) -> Tensor<f64> {
    let c = x.shape()[1];
    let inner: usize = x.shape()[2..].iter().product();
    Tensor::from_fn(x.shape(), |i| {
        let v = x.data()[i];
        if v >= 0.0 {
            v
        } else {
            slope.data()[(i / inner) % c] * v
        }
    })
}

fn sigmoid_ref(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

fn residual_ref(p: &ParamStore<f64>, prefix: &str, x: &Tensor<f64>) -> Tensor<f64> {
    let conv = |name: &str, x: &Tensor<f64>| {
        let w = p.get(&format!("{prefix}.{name}.weight")).unwrap();
        let b = p.get(&format!("{prefix}.{name}.bias")).unwrap();
        let k = w.shape()[2];
        if x.ndim() == 4 {
            conv::conv2d(x, w, Some(b), 1, k / 2).unwrap()
        } else {
            conv::conv3d(x, w, Some(b), ConvSpec::same([k; 3])).unwrap()
        }
    };
    let h = prelu_ref(
        &conv("conv0", x),
        p.get(&format!("{prefix}.act0.slope")).unwrap(),
    );
    let h = prelu_ref(
        &conv("conv1", &h),
        p.get(&format!("{prefix}.act1.slope")).unwrap(),
    );
    x.zip_map(&h, |a, b| a + b).unwrap()
}

/// Gate-by-gate evaluation of the cell with separate (unstacked) convolutions.
fn clstm_ref(
    p: &ParamStore<f64>,
    cfg: &ModelConfig,
    fp: &Tensor<f64>,
    fm: &Tensor<f64>,
    h_prev: &Tensor<f64>,
    c_prev: &Tensor<f64>,
) -> (Tensor<f64>, Tensor<f64>) {
    let s = fp.shape();
    let pv = fp
        .reshape(&[s[0], cfg.channels, cfg.bands, s[2], s[3]])
        .unwrap();
    let same = ConvSpec::same([3; 3]);
    let pre = |gate: &str| {
        let w = |part: &str| p.get(&format!("fusion.{gate}.{part}.weight")).unwrap();
        let a = conv::conv3d(&pv, w("proj"), None, same).unwrap();
        let b = conv::conv3d(
            fm,
            w("ms"),
            Some(p.get(&format!("fusion.{gate}.bias")).unwrap()),
            same,
        )
        .unwrap();
        let c = conv::conv3d(h_prev, w("hidden"), None, same).unwrap();
        a.zip_map(&b, |x, y| x + y)
            .unwrap()
            .zip_map(&c, |x, y| x + y)
            .unwrap()
    };
    let peep = |gate: &str, cell: &Tensor<f64>| {
        let w = p.get(&format!("fusion.{gate}.peep.weight")).unwrap();
        let inner: usize = cell.shape()[2..].iter().product();
        Tensor::from_fn(cell.shape(), |i| {
            w.data()[(i / inner) % cfg.channels] * cell.data()[i]
        })
    };
    let add = |a: &Tensor<f64>, b: &Tensor<f64>| a.zip_map(b, |x, y| x + y).unwrap();
    let i = sigmoid_ref(&add(&pre("input"), &peep("input", c_prev)));
    let g = pre("candidate").map(f64::tanh);
    let f = sigmoid_ref(&add(&pre("forget"), &peep("forget", c_prev)));
    let fc = f.zip_map(c_prev, |a, b| a * b).unwrap();
    let ig = i.zip_map(&g, |a, b| a * b).unwrap();
    let cell = add(&fc, &ig);
    let o = sigmoid_ref(&add(&pre("output"), &peep("output", &cell)));
    let h = o.zip_map(&cell, |a, c| a * c.tanh()).unwrap();
    (h, cell)
}

fn inputs(cfg: &ModelConfig, n: usize, size: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let pan = uniform(&mut r, &[n, 1, size, size], 0.0, 1.0);
    let ms = uniform(&mut r, &[n, cfg.bands, size / 4, size / 4], 0.0, 1.0);
    (pan, ms)
}

#[test]
fn spatial_stem_shapes_and_oracle() {
    let cfg = ModelConfig::tiny();
    let store = init_params::<f64>(&cfg, 1).unwrap();
    let (pan, _) = inputs(&cfg, 2, 16, 2);
    let y = spatial_stem(&store.bind(false), &Var::constant(pan.clone())).unwrap();
    assert_eq!(y.shape(), &[2, 16, 16, 16]);
    let w = store.get("spatial.stem.conv.weight").unwrap();
    let b = store.get("spatial.stem.conv.bias").unwrap();
    let expected = prelu_ref(
        &conv::conv2d(&pan, w, Some(b), 1, 1).unwrap(),
        store.get("spatial.stem.act.slope").unwrap(),
    );
    assert!(y.value().max_abs_diff(&expected).unwrap() < 1e-12);

    let z = spatial_stem(&zeroed(&store).bind(false), &Var::constant(pan)).unwrap();
    assert!(z.value().data().iter().all(|&v| v == 0.0));
    let bad = Tensor::<f64>::zeros(&[1, 2, 8, 8]);
    assert!(spatial_stem(&store.bind(false), &Var::constant(bad)).is_err());
}

#[test]
fn spectral_stem_shapes_and_oracle() {
    let cfg = ModelConfig::tiny();
    let store = init_params::<f64>(&cfg, 1).unwrap();
    let ms_up = uniform::<f64>(&mut rng(3), &[1, 4, 8, 8], 0.0, 1.0);
    let y = spectral_stem(&store.bind(false), &cfg, &Var::constant(ms_up.clone())).unwrap();
    assert_eq!(y.shape(), &[1, 4, 4, 8, 8]);
    let x = ms_up.reshape(&[1, 1, 4, 8, 8]).unwrap();
    let w = store.get("spectral.stem.conv.weight").unwrap();
    let b = store.get("spectral.stem.conv.bias").unwrap();
    let expected = prelu_ref(
        &conv::conv3d(&x, w, Some(b), ConvSpec::same([3; 3])).unwrap(),
        store.get("spectral.stem.act.slope").unwrap(),
    );
    assert!(y.value().max_abs_diff(&expected).unwrap() < 1e-12);
    let z = spectral_stem(&zeroed(&store).bind(false), &cfg, &Var::constant(ms_up)).unwrap();
    assert!(z.value().data().iter().all(|&v| v == 0.0));
    let wrong = Tensor::<f64>::zeros(&[1, 3, 8, 8]);
    assert!(spectral_stem(&store.bind(false), &cfg, &Var::constant(wrong)).is_err());
}

#[test]
fn residual_blocks_identity_and_oracle() {
    let cfg = ModelConfig::tiny();
    let store = init_params::<f64>(&cfg, 4).unwrap();
    let x2 = uniform::<f64>(&mut rng(5), &[2, 16, 8, 8], -1.0, 1.0);
    let x3 = uniform::<f64>(&mut rng(6), &[2, 4, 4, 8, 8], -1.0, 1.0);
    let p = store.bind(false);
    let y2 = residual2d(&p, "spatial.level1", &Var::constant(x2.clone())).unwrap();
    let y3 = residual3d(&p, "spectral.level2", &Var::constant(x3.clone())).unwrap();
    assert_eq!(y2.shape(), x2.shape());
    assert_eq!(y3.shape(), x3.shape());
    assert!(
        y2.value()
            .max_abs_diff(&residual_ref(&store, "spatial.level1", &x2))
            .unwrap()
            < 1e-12
    );
    assert!(
        y3.value()
            .max_abs_diff(&residual_ref(&store, "spectral.level2", &x3))
            .unwrap()
            < 1e-12
    );

    let z = zeroed(&store).bind(false);
    assert_eq!(
        residual2d(&z, "spatial.level1", &Var::constant(x2.clone()))
            .unwrap()
            .value(),
        &x2
    );
    assert_eq!(
        residual3d(&z, "spectral.level1", &Var::constant(x3.clone()))
            .unwrap()
            .value(),
        &x3
    );
}

#[test]
fn cell_with_zero_weights_traces_half_open_gates() {
    let cfg = ModelConfig::tiny();
    let store = zeroed(&init_params::<f64>(&cfg, 0).unwrap());
    let p = store.bind(false);
    let fp = Var::constant(uniform::<f64>(&mut rng(1), &[1, 16, 8, 8], -1.0, 1.0));
    let fm = Var::constant(uniform::<f64>(&mut rng(2), &[1, 4, 4, 8, 8], -1.0, 1.0));
    let step = s2clstm_step(&p, &cfg, &fp, &fm, &ClstmState::zeros(1, &cfg, 8, 8)).unwrap();
    for gate in [&step.gates.input, &step.gates.forget, &step.gates.output] {
        assert!(gate.value().data().iter().all(|&v| v == 0.5));
    }
    assert!(step
        .gates
        .candidate
        .value()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    assert!(step.state.cell.value().data().iter().all(|&v| v == 0.0));
    assert!(step.state.hidden.value().data().iter().all(|&v| v == 0.0));
    assert!(step.to_spatial.value().data().iter().all(|&v| v == 0.0));
    assert_eq!(step.to_spatial.shape(), &[1, 16, 8, 8]);
    assert_eq!(step.to_spectral.shape(), &[1, 4, 4, 8, 8]);
}

#[test]
fn cell_matches_gate_by_gate_oracle_over_two_steps() {
    let cfg = ModelConfig::tiny();
    let store = init_params::<f64>(&cfg, 7).unwrap();
    let mut store = store;
    for gate in ["input", "candidate", "forget", "output"] {
        let b = store.get_mut(&format!("fusion.{gate}.bias")).unwrap();
        *b = uniform(&mut rng(8), &[4], -0.5, 0.5);
    }
    let p = store.bind(false);
    let mut state = ClstmState::zeros(1, &cfg, 8, 8);
    let (mut h, mut c) = (
        Tensor::zeros(&[1, 4, 4, 8, 8]),
        Tensor::zeros(&[1, 4, 4, 8, 8]),
    );
    for step_seed in 0..2 {
        let fp = uniform::<f64>(&mut rng(10 + step_seed), &[1, 16, 8, 8], -1.0, 1.0);
        let fm = uniform::<f64>(&mut rng(20 + step_seed), &[1, 4, 4, 8, 8], -1.0, 1.0);
        let step = s2clstm_step(
            &p,
            &cfg,
            &Var::constant(fp.clone()),
            &Var::constant(fm.clone()),
            &state,
        )
        .unwrap();
        let (h_ref, c_ref) = clstm_ref(&store, &cfg, &fp, &fm, &h, &c);
        assert!(step.state.hidden.value().max_abs_diff(&h_ref).unwrap() < 1e-12);
        assert!(step.state.cell.value().max_abs_diff(&c_ref).unwrap() < 1e-12);
        // planar feedback is a reshape of the hidden state
        assert_eq!(
            step.to_spatial.value().reshape(&[1, 4, 4, 8, 8]).unwrap(),
            h_ref
        );
        for ch in 0..4 {
            for band in 0..4 {
                assert_eq!(
                    step.to_spatial.value().get(&[0, ch * 4 + band, 3, 5]),
                    step.to_spectral.value().get(&[0, ch, band, 3, 5])
                );
            }
        }
        state = step.state;
        h = h_ref;
        c = c_ref;
    }
}

#[test]
fn cell_rejects_mismatched_state() {
    let cfg = ModelConfig::tiny();
    let store = init_params::<f64>(&cfg, 0).unwrap();
    let fp = Var::constant(Tensor::zeros(&[1, 16, 8, 8]));
    let fm = Var::constant(Tensor::zeros(&[1, 4, 4, 8, 8]));
    let state = ClstmState::zeros(1, &cfg, 4, 4);
    assert!(s2clstm_step(&store.bind(false), &cfg, &fp, &fm, &state).is_err());
}

#[test]
fn planar_volume_views_round_trip() {
    let cfg = ModelConfig::tiny();
    let x = Var::constant(uniform::<f64>(&mut rng(1), &[2, 16, 4, 4], -1.0, 1.0));
    let back = to_planar(&to_volume(&x, &cfg).unwrap()).unwrap();
    assert_eq!(back.value(), x.value());
}

#[test]
fn level_without_fusion_is_pure_residual_and_fused_level_adds_feedback() {
    let cfg = ModelConfig::tiny();
    let store = init_params::<f64>(&cfg, 3).unwrap();
    let p = store.bind(false);
    let fp = uniform::<f64>(&mut rng(1), &[1, 16, 8, 8], -1.0, 1.0);
    let fm = uniform::<f64>(&mut rng(2), &[1, 4, 4, 8, 8], -1.0, 1.0);
    let state = ClstmState::zeros(1, &cfg, 8, 8);
    let (vp, vm) = (Var::constant(fp.clone()), Var::constant(fm.clone()));

    let plain = ModelConfig {
        fusion_levels: BTreeSet::new(),
        ..cfg.clone()
    };
    let out = channel_level(&p, &plain, 1, &vp, &vm, &state).unwrap();
    let rp = residual_ref(&store, "spatial.level1", &fp);
    let rm = residual_ref(&store, "spectral.level1", &fm);
    assert!(out.spatial.value().max_abs_diff(&rp).unwrap() < 1e-12);
    assert!(out.spectral.value().max_abs_diff(&rm).unwrap() < 1e-12);

    let fused = channel_level(&p, &cfg, 1, &vp, &vm, &state).unwrap();
    let zeros = Tensor::zeros(&[1, 4, 4, 8, 8]);
    let (h, _) = clstm_ref(&store, &cfg, &rp, &rm, &zeros, &zeros);
    let expect_p = rp
        .zip_map(&h.reshape(&[1, 16, 8, 8]).unwrap(), |a, b| a + b)
        .unwrap();
    let expect_m = rm.zip_map(&h, |a, b| a + b).unwrap();
    assert!(fused.spatial.value().max_abs_diff(&expect_p).unwrap() < 1e-12);
    assert!(fused.spectral.value().max_abs_diff(&expect_m).unwrap() < 1e-12);
    assert!(fused.state.hidden.value().max_abs_diff(&h).unwrap() < 1e-12);

    // last level: state advances but features are not fed back
    let last = channel_level(&p, &cfg, 2, &vp, &vm, &state).unwrap();
    assert!(
        last.spatial
            .value()
            .max_abs_diff(&residual_ref(&store, "spatial.level2", &fp))
            .unwrap()
            < 1e-12
    );
    assert!(last.state.hidden.value().data().iter().any(|&v| v != 0.0));
}

#[test]
fn alternative_fusions_on_simple_inputs() {
    let cfg = ModelConfig {
        fusion_op: FusionOp::Conv,
        ..ModelConfig::tiny()
    };
    let store = init_params::<f64>(&cfg, 0).unwrap();
    let p = store.bind(false);
    let a = uniform::<f64>(&mut rng(1), &[1, 4, 4, 4, 4], -1.0, 1.0);
    let planar = Var::constant(a.reshape(&[1, 16, 4, 4]).unwrap());
    let zero = Var::constant(Tensor::zeros(a.shape()));
    let ones = Var::constant(Tensor::ones(a.shape()));
    let same = Var::constant(a.clone());
    assert_eq!(
        alt_fusion(&p, &cfg, FusionOp::Sum, &planar, &zero)
            .unwrap()
            .value(),
        &a
    );
    assert!(
        alt_fusion(&p, &cfg, FusionOp::Average, &planar, &same)
            .unwrap()
            .value()
            .max_abs_diff(&a)
            .unwrap()
            < 1e-15
    );
    assert_eq!(
        alt_fusion(&p, &cfg, FusionOp::Product, &planar, &ones)
            .unwrap()
            .value(),
        &a
    );
    let m = alt_fusion(&p, &cfg, FusionOp::Max, &planar, &zero).unwrap();
    assert_eq!(m.value(), &a.map(|v| v.max(0.0)));
    assert_eq!(
        alt_fusion(&p, &cfg, FusionOp::Conv, &planar, &same)
            .unwrap()
            .shape(),
        a.shape()
    );
    assert!(alt_fusion(&p, &cfg, FusionOp::S2clstm, &planar, &same).is_err());
}

#[test]
fn reconstruction_contract() {
    let cfg = ModelConfig::tiny();
    let store = init_params::<f64>(&cfg, 2).unwrap();
    let fp = Var::constant(uniform::<f64>(&mut rng(1), &[1, 16, 8, 8], -1.0, 1.0));
    let fm = Var::constant(uniform::<f64>(&mut rng(2), &[1, 4, 4, 8, 8], -1.0, 1.0));
    let h = Var::constant(uniform::<f64>(&mut rng(3), &[1, 4, 4, 8, 8], -1.0, 1.0));
    let y = reconstruct(&store.bind(false), &cfg, &fp, &fm, &h).unwrap();
    assert_eq!(y.shape(), &[1, 4, 8, 8]);
    let z = zeroed(&store).bind(false);
    let zp = Var::constant(Tensor::zeros(&[1, 16, 8, 8]));
    let zm = Var::constant(Tensor::zeros(&[1, 4, 4, 8, 8]));
    let y = reconstruct(&z, &cfg, &zp, &zm, &zm).unwrap();
    assert!(y.value().data().iter().all(|&v| v == 0.0));
    let short = Var::constant(Tensor::zeros(&[1, 4, 4, 4, 4]));
    assert!(reconstruct(&store.bind(false), &cfg, &fp, &fm, &short).is_err());
}

#[test]
fn forward_shapes_and_finiteness() {
    let cfg = ModelConfig::tiny();
    let model = Dcnet::<f32>::new(cfg.clone(), 0).unwrap();
    let mut r = rng(4);
    let pan = uniform::<f32>(&mut r, &[1, 1, 32, 32], 0.0, 1.0);
    let ms = uniform::<f32>(&mut r, &[1, 4, 8, 8], 0.0, 1.0);
    let y = model.predict(&pan, &ms).unwrap();
    assert_eq!(y.shape(), &[1, 4, 32, 32]);
    assert!(y.all_finite());
    let trace = model.trace(&pan, &ms).unwrap();
    assert_eq!(trace.get("stem.spatial").unwrap(), &[1, 16, 32, 32]);
    assert_eq!(trace.get("stem.spectral").unwrap(), &[1, 4, 4, 32, 32]);
    assert_eq!(
        trace.get("level1.fusion.to_spatial").unwrap(),
        &[1, 16, 32, 32]
    );
    assert_eq!(
        trace.get("level2.spectral.fusion_in").unwrap(),
        &[1, 4, 4, 32, 32]
    );
    assert_eq!(trace.get("output").unwrap(), &[1, 4, 32, 32]);

    let odd = uniform::<f32>(&mut r, &[1, 4, 7, 8], 0.0, 1.0);
    assert!(matches!(
        model.predict(&pan, &odd),
        Err(dcnet_core::Error::Ratio(_))
    ));
}

#[test]
fn zero_weights_give_final_bias_field_and_finite_gradients() {
    let cfg = ModelConfig::tiny();
    let mut store = init_params::<f64>(&cfg, 0).unwrap();
    for (name, t) in store.iter_mut() {
        if name.ends_with(".weight") {
            *t = Tensor::zeros(t.shape());
        } else if name.ends_with(".bias") {
            *t = Tensor::full(t.shape(), 0.1);
        }
    }
    *store.get_mut("recon.out.bias").unwrap() = Tensor::scalar(0.37).reshape(&[1]).unwrap();
    let mut model = Dcnet {
        config: cfg,
        params: store,
    };
    let (pan, ms) = inputs(&model.config, 1, 16, 1);
    let y = model.predict(&pan, &ms).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.37));
    let ms_up = dcnet_core::data::upsample_ms(&ms).unwrap();
    let truth = uniform::<f64>(&mut rng(2), &[1, 4, 16, 16], 0.0, 1.0);
    model
        .loss_and_grads(&Batch {
            pan: &pan,
            ms_up: &ms_up,
            truth: &truth,
        })
        .unwrap();
    for (name, _) in model.params.iter() {
        assert!(model.params.grad(name).unwrap().all_finite(), "{name}");
    }
}

#[test]
fn loss_examples() {
    let p = ParamStore::<f64>::new();
    let mut w = ParamStore::<f64>::new();
    w.insert("a.weight", Tensor::new(&[2], vec![1.0, 2.0]).unwrap())
        .unwrap();
    w.insert("a.bias", Tensor::new(&[1], vec![5.0]).unwrap())
        .unwrap();
    w.insert("a.slope", Tensor::new(&[1], vec![0.25]).unwrap())
        .unwrap();
    let y = Var::constant(uniform::<f64>(&mut rng(0), &[2, 3], -1.0, 1.0));
    assert_eq!(
        loss(&y, &y, &p.bind(false), 0.0)
            .unwrap()
            .total
            .value()
            .item(),
        0.0
    );
    let l = loss(&y, &y, &w.bind(false), 0.5).unwrap();
    assert_eq!(l.total.value().item(), 0.5 * 5.0);
    assert_eq!(l.l1.value().item(), 0.0);
    let shifted = Var::constant(Tensor::from_fn(&[2, 3], |i| {
        y.value().data()[i] + if i % 2 == 0 { 1.0 } else { -1.0 }
    }));
    assert!(
        (loss(&shifted, &y, &p.bind(false), 0.0)
            .unwrap()
            .total
            .value()
            .item()
            - 1.0)
            .abs()
            < 1e-15
    );
    let other = Var::constant(Tensor::zeros(&[3, 2]));
    assert!(loss(&other, &y, &p.bind(false), 0.0).is_err());
}

#[test]
fn fusion_levels_change_the_output() {
    let full = ModelConfig {
        levels: 3,
        fusion_levels: (1..=3).collect(),
        ..ModelConfig::tiny()
    };
    let store = init_params::<f64>(&full, 9).unwrap();
    let (pan, ms) = inputs(&full, 1, 16, 3);
    let run = |levels: &[usize]| {
        let cfg = ModelConfig {
            fusion_levels: levels.iter().copied().collect(),
            ..full.clone()
        };
        forward(&store.bind(false), &cfg, &pan, &ms, None)
            .unwrap()
            .value()
            .clone()
    };
    let none = run(&[]);
    for set in [&[1][..], &[2], &[3], &[1, 2, 3]] {
        assert!(
            run(set).max_abs_diff(&none).unwrap() > 1e-9,
            "levels {set:?} left the output unchanged"
        );
    }
    // without fusion the spatial channel reaches the output only through reconstruction
    let none_again = run(&[]);
    assert_eq!(none, none_again);
}

#[test]
fn planar_backbone_preserves_shapes() {
    let cfg = ModelConfig {
        backbone: Backbone::Planar2d,
        ..ModelConfig::tiny()
    };
    let model = Dcnet::<f32>::new(cfg, 0).unwrap();
    let mut r = rng(1);
    let pan = uniform::<f32>(&mut r, &[2, 1, 16, 16], 0.0, 1.0);
    let ms = uniform::<f32>(&mut r, &[2, 4, 4, 4], 0.0, 1.0);
    let trace = model.trace(&pan, &ms).unwrap();
    assert_eq!(trace.get("stem.spectral").unwrap(), &[2, 4, 4, 16, 16]);
    assert_eq!(trace.get("output").unwrap(), &[2, 4, 16, 16]);
    assert!(
        model
            .params
            .get("spectral.stem.conv.weight")
            .unwrap()
            .ndim()
            == 4
    );
}

#[test]
fn deconv_projection_runs_and_differs_from_reshape() {
    let cfg = ModelConfig {
        projection: Projection::Deconv,
        ..ModelConfig::tiny()
    };
    let model = Dcnet::<f64>::new(cfg, 0).unwrap();
    let (pan, ms) = inputs(&model.config, 1, 16, 5);
    let trace = model.trace(&pan, &ms).unwrap();
    assert_eq!(
        trace.get("level1.fusion.to_spectral").unwrap(),
        &[1, 4, 4, 16, 16]
    );
    assert!(model.predict(&pan, &ms).unwrap().all_finite());
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        fusion_op: FusionOp::Conv,
        forget_bias: 1.0,
        ..ModelConfig::tiny()
    };
    let model = Dcnet::<f32>::new(cfg, 11).unwrap();
    let path = dir.path().join("model.pten");
    model.save(&path).unwrap();
    assert!(config_sidecar(&path).exists());
    let back = Dcnet::<f32>::load(&path).unwrap();
    assert_eq!(back, model);
    let mut r = rng(1);
    let pan = uniform::<f32>(&mut r, &[1, 1, 16, 16], 0.0, 1.0);
    let ms = uniform::<f32>(&mut r, &[1, 4, 4, 4], 0.0, 1.0);
    let (a, b) = (
        model.predict(&pan, &ms).unwrap(),
        back.predict(&pan, &ms).unwrap(),
    );
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn load_rejects_mismatched_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pten");
    Dcnet::<f32>::new(ModelConfig::tiny(), 0)
        .unwrap()
        .save(&path)
        .unwrap();
    let other = serde_json::json!({ "model": ModelConfig { channels: 8, ..ModelConfig::tiny() } });
    std::fs::write(config_sidecar(&path), other.to_string()).unwrap();
    assert!(Dcnet::<f32>::load(&path).is_err());
}

/// End-to-end gradient check of the training objective on random parameters.
#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let cfg = ModelConfig {
        lambda: 1e-3,
        ..ModelConfig::tiny()
    };
    let check = gradient_check(&cfg, 16, 20, 1e-3, 42).unwrap();
    assert_eq!(check.samples.len(), 20);
    for s in &check.samples {
        assert!(s.relative_error(1e-6) < 1e-3, "{s:?}");
    }
    // biases, slopes and weights all appear among the accepted draws
    for suffix in [".weight", ".bias", ".slope"] {
        assert!(
            check.samples.iter().any(|s| s.name.ends_with(suffix)),
            "no {suffix} sampled"
        );
    }
}

#[test]
fn gradient_check_covers_variants() {
    for cfg in [
        ModelConfig {
            projection: Projection::Deconv,
            ..ModelConfig::tiny()
        },
        ModelConfig {
            backbone: Backbone::Planar2d,
            fusion_op: FusionOp::Conv,
            ..ModelConfig::tiny()
        },
        ModelConfig {
            fusion_op: FusionOp::Max,
            ..ModelConfig::tiny()
        },
    ] {
        for s in gradient_check(&cfg, 16, 6, 1e-3, 7).unwrap().samples {
            assert!(
                s.relative_error(1e-6) < 1e-3,
                "{:?}/{:?}: {s:?}",
                cfg.projection,
                cfg.fusion_op
            );
        }
    }
}

/// Shrinking the step on a draw that straddles a kink recovers the tape value.
#[test]
fn rejected_draws_are_kink_artifacts() {
    let cfg = ModelConfig::tiny();
    let check = gradient_check(&cfg, 16, 20, 1e-3, 42).unwrap();
    assert!(check.rejected > 0);
    let fine = gradient_check(&cfg, 16, 20, 1e-6, 42).unwrap();
    assert!(fine.rejected < check.rejected);
    for s in &fine.samples {
        assert!(s.relative_error(1e-6) < 1e-3, "{s:?}");
    }
}

#[test]
fn training_objective_penalizes_weights_only() {
    let cfg = ModelConfig {
        lambda: 0.5,
        ..ModelConfig::tiny()
    };
    let model = Dcnet::<f64>::new(cfg, 0).unwrap();
    let sq: f64 = model
        .params
        .iter()
        .filter(|(n, _)| n.ends_with(".weight"))
        .map(|(_, t)| t.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let (pan, ms) = inputs(&model.config, 1, 16, 0);
    let ms_up = dcnet_core::data::upsample_ms(&ms).unwrap();
    let y = model.predict_prepared(&pan, &ms_up).unwrap();
    let v = model
        .evaluate_loss(&Batch {
            pan: &pan,
            ms_up: &ms_up,
            truth: &y,
        })
        .unwrap();
    assert_eq!(v.l1, 0.0);
    assert!((v.total - 0.5 * sq).abs() < 1e-9 * sq);
}
