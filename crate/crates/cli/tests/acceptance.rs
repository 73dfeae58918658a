//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line with
//! what it measured; run with `--nocapture` to see them. The tests share a
//! lock so wall-clock limits are measured without competing threads.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use dcnet_cli::commands::{self, Axis, EvalMode, Inputs};
use dcnet_cli::config::ExperimentConfig;
use dcnet_cli::dataset::Dataset;
use dcnet_cli::train::{evaluate, train};
use dcnet_core::data::{
    read_archive, read_tensor, synth_scene, write_archive, write_tensor, Pnm, DN_RANGE,
};
use dcnet_core::engine::conv::{self, ConvSpec};
use dcnet_core::engine::reference;
use dcnet_core::metrics::{ergas, q2n, qnr, sam, scc, uiqi_bands};
use dcnet_core::model::{gradient_check, Dcnet, ModelConfig};
use dcnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict line and fails the test on a miss.
fn verdict(criterion: &str, pass: bool, detail: String) {
    // the raw handle bypasses libtest's capture, so every verdict is shown
    let line = format!("{} {criterion}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stderr().lock().write_all(line.as_bytes()).unwrap();
    assert!(pass, "{criterion}: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[test]
fn gradient_fidelity() {
    let _g = serial();
    let t0 = Instant::now();
    let check = gradient_check(&ModelConfig::tiny(), 16, 20, 1e-3, 2024).unwrap();
    let elapsed = t0.elapsed();
    let worst = check.max_relative_error(1e-6);
    verdict(
        "gradient fidelity",
        check.samples.len() >= 20 && worst < 1e-3 && elapsed < Duration::from_secs(120),
        format!(
            "{} parameters, max relative error {worst:.2e} (< 1e-3), {:.1}s (< 120s)",
            check.samples.len(),
            secs(elapsed)
        ),
    );
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// One randomized fast-vs-naive comparison; returns the max abs difference.
fn conv_case(r: &mut ChaCha8Rng, case: usize) -> f64 {
    let n = r.gen_range(1..=2);
    let groups = r.gen_range(1..=2);
    let cin = groups * r.gen_range(1..=3);
    let cout = groups * r.gen_range(1..=3);
    let k: [usize; 3] = [r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3)];
    let s: [usize; 3] = [r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(1..=2)];
    let p: [usize; 3] = [r.gen_range(0..k[0]), r.gen_range(0..k[1]), r.gen_range(0..k[2])];
    let ext = |r: &mut ChaCha8Rng, i: usize| k[i] + r.gen_range(0..6);
    let (d, h, w) = (ext(r, 0), ext(r, 1), ext(r, 2));
    let bias = uniform(r, &[cout]);
    match case % 4 {
        0 => {
            let x = uniform(r, &[n, cin, h, w]);
            let wt = uniform(r, &[cout, cin / groups, k[1], k[2]]);
            let fast = conv::grouped_conv2d(&x, &wt, Some(&bias), s[1], p[1], groups).unwrap();
            let slow = reference::conv2d_naive(&x, &wt, Some(&bias), s[1], p[1], groups);
            fast.max_abs_diff(&slow).unwrap()
        }
        1 => {
            let x = uniform(r, &[n, cin, d, h, w]);
            let wt = uniform(r, &[cout, cin / groups, k[0], k[1], k[2]]);
            let spec = ConvSpec {
                stride: s,
                padding: p,
                groups,
            };
            let fast = conv::conv3d(&x, &wt, Some(&bias), spec).unwrap();
            let slow = reference::conv3d_naive(&x, &wt, Some(&bias), s, p, groups);
            fast.max_abs_diff(&slow).unwrap()
        }
        2 => {
            let x = uniform(r, &[n, cin, h, w]);
            // one stride and padding for both axes, so a square kernel
            let kk = k[1];
            let wt = uniform(r, &[cin, cout, kk, kk]);
            let pad = p[1].min((kk - 1) / 2);
            let out = |i: usize, r: &mut ChaCha8Rng| (i - 1) * s[1] + kk - 2 * pad + r.gen_range(0..s[1]);
            let (oh, ow) = (out(h, r), out(w, r));
            let bias = uniform(r, &[cout]);
            let fast =
                conv::conv_transpose2d(&x, &wt, Some(&bias), s[1], pad, Some([oh, ow])).unwrap();
            let slow = reference::conv_transpose3d_naive(
                &x.reshape(&[n, cin, 1, h, w]).unwrap(),
                &wt.reshape(&[cin, cout, 1, kk, kk]).unwrap(),
                Some(&bias),
                [1, s[1], s[1]],
                [0, pad, pad],
                1,
                [1, oh, ow],
            );
            fast.max_abs_diff(&slow.into_reshaped(&[n, cout, oh, ow]).unwrap())
                .unwrap()
        }
        _ => {
            let x = uniform(r, &[n, cin, d, h, w]);
            let wt = uniform(r, &[cin, cout / groups, k[0], k[1], k[2]]);
            let pad: [usize; 3] = std::array::from_fn(|i| p[i].min((k[i] - 1) / 2));
            let dims = [d, h, w];
            let out: [usize; 3] = std::array::from_fn(|i| {
                (dims[i] - 1) * s[i] + k[i] - 2 * pad[i] + r.gen_range(0..s[i])
            });
            let spec = ConvSpec {
                stride: s,
                padding: pad,
                groups,
            };
            let fast = conv::conv_transpose3d(&x, &wt, Some(&bias), spec, Some(out)).unwrap();
            let slow = reference::conv_transpose3d_naive(&x, &wt, Some(&bias), s, pad, groups, out);
            fast.max_abs_diff(&slow).unwrap()
        }
    }
}

#[test]
fn convolution_oracle() {
    let _g = serial();
    let t0 = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let worst = (0..100).map(|i| conv_case(&mut r, i)).fold(0.0, f64::max);
    let elapsed = t0.elapsed();
    verdict(
        "convolution oracle",
        worst < 1e-5 && elapsed < Duration::from_secs(60),
        format!(
            "100 cases over conv2d/conv3d/transposed/grouped, max abs diff {worst:.2e} (< 1e-5), {:.2}s (< 60s)",
            secs(elapsed)
        ),
    );
}

/// Every feature shape of the forward pass on a 128² patch.
fn shape_table(cfg: ModelConfig) -> Vec<(String, Vec<usize>, Vec<usize>)> {
    let (b, c) = (cfg.bands, cfg.channels);
    let wide = cfg.spatial_width();
    let levels = cfg.levels;
    let model = Dcnet::<f32>::new(cfg, 0).unwrap();
    let pan = Tensor::full(&[1, 1, 128, 128], 0.5f32);
    let ms = Tensor::full(&[1, b, 32, 32], 0.5f32);
    let trace = model.trace(&pan, &ms).unwrap();
    let planar = vec![1, wide, 128, 128];
    let volume = vec![1, c, b, 128, 128];
    let mut expect = vec![
        ("stem.spatial".to_string(), planar.clone()),
        ("stem.spectral".to_string(), volume.clone()),
    ];
    for l in 1..=levels {
        if l < levels {
            expect.push((format!("level{l}.spatial.out"), planar.clone()));
            expect.push((format!("level{l}.spectral.out"), volume.clone()));
        }
        expect.push((format!("level{l}.fusion.to_spatial"), planar.clone()));
        expect.push((format!("level{l}.fusion.to_spectral"), volume.clone()));
    }
    expect.push(("output".to_string(), vec![1, b, 128, 128]));
    expect
        .into_iter()
        .map(|(name, want)| {
            let got = trace.get(&name).map(<[usize]>::to_vec).unwrap_or_default();
            (name, want, got)
        })
        .collect()
}

#[test]
fn shape_conformance() {
    let _g = serial();
    for (label, cfg) in [
        ("4-band (C=32)", ModelConfig::ikonos()),
        ("8-band (C=16)", ModelConfig::worldview2()),
    ] {
        let rows = shape_table(cfg);
        let bad: Vec<String> = rows
            .iter()
            .filter(|(_, w, g)| w != g)
            .map(|(n, w, g)| format!("{n}: want {w:?} got {g:?}"))
            .collect();
        let stem = &rows[0].2;
        let clstm = &rows
            .iter()
            .find(|(n, _, _)| n == "level1.fusion.to_spectral")
            .unwrap()
            .2;
        verdict(
            &format!("shape conformance {label}"),
            bad.is_empty(),
            if bad.is_empty() {
                format!(
                    "{} feature maps match; spatial stem {stem:?}, fused spectral {clstm:?}",
                    rows.len()
                )
            } else {
                bad.join("; ")
            },
        );
    }
}

#[test]
fn metric_identities() {
    let _g = serial();
    let mut worst: f64 = 0.0;
    for bands in [4, 8] {
        let (img, _) = synth_scene::<f64>(5, bands, 64, 64).unwrap();
        worst = worst
            .max(sam(&img, &img).unwrap().abs())
            .max(ergas(&img, &img, 4).unwrap().abs())
            .max((uiqi_bands(&img, &img, 32).unwrap() - 1.0).abs())
            .max((q2n(&img, &img, 32).unwrap() - 1.0).abs())
            .max((scc(&img, &img).unwrap() - 1.0).abs());
    }
    worst = worst.max((qnr(0.0, 0.0, 1.0, 1.0) - 1.0).abs());
    verdict(
        "metric identities",
        worst <= 1e-9,
        format!("SAM, ERGAS, UIQI, Q4, Q8, SCC on identical images and QNR(0,0): max deviation {worst:.1e} (<= 1e-9)"),
    );
}

#[test]
fn metric_hand_values() {
    let _g = serial();
    let f = Tensor::<f64>::from_f64(&[2, 1, 1], &[1.0, 0.0]).unwrap();
    let r = Tensor::<f64>::from_f64(&[2, 1, 1], &[1.0, 1.0]).unwrap();
    let angle = sam(&f, &r).unwrap();
    // reference mean 10, errors of +-10 everywhere: RMSE equals the mean
    let reference = Tensor::<f64>::full(&[1, 4, 4], 10.0);
    let fused = Tensor::<f64>::from_fn(&[1, 4, 4], |i| if i % 2 == 0 { 0.0 } else { 20.0 });
    let e = ergas(&fused, &reference, 4).unwrap();
    verdict(
        "metric hand values",
        (angle - 45.0).abs() <= 1e-6 && (e - 25.0).abs() <= 1e-9,
        format!("SAM((1,0),(1,1)) = {angle:.9} deg, ERGAS(RMSE = mean, ratio 4) = {e:.12}"),
    );
}

/// Eight 32² synthetic scenes of the tiny model, trained one patch per step.
fn overfit_config(out: &Path) -> ExperimentConfig {
    let mut v = json!({
        "model": "tiny",
        "train": {
            "seed": 0,
            "epochs": 500,
            "base_lr": 5e-3,
            "batch_size": 1,
            "checkpoint_every": 500
        },
        "data": {
            "source": {"synth": {"count": 8, "height": 32, "width": 32}},
            "split": {"train": 1, "val": 0, "test": 0},
            "patch_size": 32
        },
        "output_dir": out
    });
    ExperimentConfig::from_value(&mut v, &[]).unwrap()
}

#[test]
fn overfit_fixture() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = overfit_config(dir.path());
    let t0 = Instant::now();
    let data = Dataset::<f32>::build(&cfg).unwrap();
    let out = train(&cfg, &data, dir.path(), false, |_| {}).unwrap();
    let elapsed = t0.elapsed();
    let ev = evaluate(&out.best, "train", &data.train, 1).unwrap();
    let (l1, sam_deg, scc) = (ev.l1, ev.mean.sam_deg, ev.mean.scc);
    verdict(
        "overfit fixture",
        data.train.len() == 8
            && out.progress.curve.len() <= 500
            && l1 < 0.02
            && sam_deg < 3.0
            && scc > 0.95
            && elapsed < Duration::from_secs(600),
        format!(
            "{} patches, {} epochs, l1 {l1:.4} (< 0.02), SAM {sam_deg:.2} deg (< 3), SCC {scc:.3} (> 0.95), {:.0}s (< 600s)",
            data.train.len(),
            out.progress.curve.len(),
            secs(elapsed)
        ),
    );
}

fn ablation_config(out: &Path) -> ExperimentConfig {
    let mut v = json!({
        "model": {"preset": "tiny", "levels": 4},
        "train": {"seed": 3, "epochs": 2, "batch_size": 2},
        "data": {
            "source": {"synth": {"count": 1, "height": 64, "width": 64, "seed": 8}},
            "split": {"train": 2, "val": 1, "test": 1},
            "patch_size": 32
        },
        "output_dir": out
    });
    ExperimentConfig::from_value(&mut v, &[]).unwrap()
}

#[test]
fn ablation_machinery() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ablation_config(dir.path());
    for (axis, want) in [
        (Axis::FusionLevels, vec!["{4}", "{3,4}", "{2,3,4}", "{1,2,3,4}"]),
        (
            Axis::FusionOp,
            vec!["sum", "max", "average", "product", "conv", "s2clstm"],
        ),
        (Axis::Backbone, vec!["2d3d", "2d2d"]),
    ] {
        let rows = commands::ablate(&cfg, axis, 1, true).unwrap();
        let labels: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
        let finite = rows.iter().all(|r| {
            r.status == "completed"
                && r.metrics.values().iter().all(|v| v.is_some_and(f64::is_finite))
        });
        let csv = dir.path().join(format!("ablation_{}.csv", axis.name()));
        let lines = std::fs::read_to_string(&csv).map(|s| s.lines().count()).unwrap_or(0);
        verdict(
            &format!("ablation {}", axis.name()),
            labels == want && finite && lines == want.len() + 1,
            format!(
                "variants {labels:?}, all 8 metric columns finite: {finite}, {} csv rows",
                lines.saturating_sub(1)
            ),
        );
    }
}

/// synth -> degrade -> train -> sharpen -> evaluate in `root`; returns the
/// bytes of the run manifest and the metrics report.
fn pipeline(root: &Path) -> (Vec<u8>, Vec<u8>) {
    let raw = root.join("raw");
    let scenes = root.join("scenes");
    for (i, name) in ["a", "b"].into_iter().enumerate() {
        let f = commands::synth(&raw, name, 40 + i as u64, 4, 32, 32).unwrap();
        commands::degrade(&f.truth, &f.pan_full, &scenes, name, DN_RANGE).unwrap();
    }
    let mut v = json!({
        "model": "tiny",
        "train": {"seed": 9, "epochs": 50, "batch_size": 2, "checkpoint_every": 10},
        "data": {
            "source": {"scenes": scenes},
            "split": {"train": 2, "val": 1, "test": 1},
            "patch_size": 16
        },
        "output_dir": root.join("run")
    });
    let cfg = ExperimentConfig::from_value(&mut v, &[]).unwrap();
    commands::train(&cfg, false, true).unwrap();
    let fused = root.join("fused/a.pten");
    commands::sharpen(
        &root.join("run/best.pten"),
        &Inputs::Scene(scenes.join("a.pten")),
        None,
        &fused,
    )
    .unwrap();
    let cases = commands::eval_cases(&fused, None, Some(&scenes.join("a.pten")), None).unwrap();
    let report = commands::evaluate(&cases, EvalMode::Both, 32).unwrap();
    commands::write_eval_report(&root.join("metrics"), &report).unwrap();
    (
        std::fs::read(root.join("run/manifest.json")).unwrap(),
        std::fs::read(root.join("metrics/metrics.json")).unwrap(),
    )
}

#[test]
fn determinism() {
    let _g = serial();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ma, ra) = pipeline(a.path());
    let (mb, rb) = pipeline(b.path());
    let epochs = serde_json::from_slice::<serde_json::Value>(&ma).unwrap()["epochs_run"].clone();
    verdict(
        "determinism",
        ma == mb && ra == rb && epochs == json!(50),
        format!(
            "two seeded runs ({epochs} epochs): manifests identical: {}, metric reports identical: {}",
            ma == mb,
            ra == rb
        ),
    );
}

#[test]
fn format_round_trips() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let mut ok = Vec::new();

    let t32: Tensor<f32> = Tensor::from_fn(&[2, 3, 5], |i| match i {
        0 => f32::MIN_POSITIVE / 2.0,
        1 => -0.0,
        2 => f32::MAX,
        _ => r.gen_range(-1e6..1e6),
    });
    let t64: Tensor<f64> = Tensor::from_fn(&[7, 4], |_| r.gen_range(-1.0..1.0) * 1e-300);
    write_tensor(dir.path().join("a.pten"), &t32).unwrap();
    write_tensor(dir.path().join("b.pten"), &t64).unwrap();
    let back32 = read_tensor::<f32>(dir.path().join("a.pten")).unwrap();
    let back64 = read_tensor::<f64>(dir.path().join("b.pten")).unwrap();
    let bits32 = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let bits64 = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ok.push((
        "tensor",
        back32.shape() == t32.shape()
            && bits32(&back32) == bits32(&t32)
            && bits64(&back64) == bits64(&t64),
    ));

    let entries = vec![("x", &t64), ("y/z", &t64)];
    write_archive(dir.path().join("c.pten"), entries.clone()).unwrap();
    let archive = read_archive::<f64>(dir.path().join("c.pten")).unwrap();
    ok.push((
        "archive",
        archive.len() == 2 && archive[1].0 == "y/z" && bits64(&archive[1].1) == bits64(&t64),
    ));

    let model = Dcnet::<f32>::new(ModelConfig::tiny(), 5).unwrap();
    model.save(dir.path().join("m.pten")).unwrap();
    let loaded = Dcnet::<f32>::load(dir.path().join("m.pten")).unwrap();
    let same = loaded.config == model.config
        && loaded.params.len() == model.params.len()
        && model
            .params
            .iter()
            .zip(loaded.params.iter())
            .all(|((na, a), (nb, b))| na == nb && bits32(a) == bits32(b));
    ok.push(("checkpoint", same));

    for (channels, name) in [(1, "g.pgm"), (3, "c.ppm")] {
        let samples: Vec<u16> = (0..9 * 7 * channels).map(|_| r.gen()).collect();
        let img = Pnm::new(9, 7, channels, u16::MAX, samples).unwrap();
        let path = dir.path().join(name);
        img.write(&path).unwrap();
        ok.push((if channels == 1 { "pgm16" } else { "ppm16" }, Pnm::read(&path).unwrap() == img));
    }

    let failed: Vec<&str> = ok.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    verdict(
        "format round-trips",
        failed.is_empty(),
        format!(
            "{} bit-exact ({}); failed: {failed:?}",
            ok.len() - failed.len(),
            ok.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
        ),
    );
}
