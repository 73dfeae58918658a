use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

const ENV: &str = "DCNET_OUT_DIR";

fn dcnet(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dcnet"));
    cmd.args(args).env_remove(ENV);
    if let Some(dir) = env_out {
        cmd.env(ENV, dir);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, out: &Path, extra_train: serde_json::Value) -> std::path::PathBuf {
    let mut train = json!({"seed": 1, "epochs": 1, "batch_size": 2});
    train.as_object_mut().unwrap().extend(extra_train.as_object().unwrap().clone());
    let cfg = json!({
        "model": "tiny",
        "train": train,
        "data": {
            "source": {"synth": {"count": 1, "height": 16, "width": 16}},
            "split": {"train": 1, "val": 0, "test": 0},
            "patch_size": 16
        },
        "output_dir": out
    });
    let path = dir.join("exp.json");
    std::fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&dcnet(&["--help"], None)), 0);
    assert_eq!(code(&dcnet(&["--version"], None)), 0);
    assert_eq!(code(&dcnet(&["train", "--help"], None)), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&dcnet(&[], None)), 1);
    assert_eq!(code(&dcnet(&["frobnicate"], None)), 1);
    assert_eq!(code(&dcnet(&["synth", "--seed", "x", "--out", "/tmp"], None)), 1);
    assert_eq!(code(&dcnet(&["degrade", "--truth", "a", "--pan", "b", "--out", "o", "--range", "5,1"], None)), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &dir.path().join("o"), json!({}));
    let bad_axis = dcnet(&["ablate", "--config", s(&cfg), "--axis", "depth"], None);
    assert_eq!(code(&bad_axis), 1);
    let bad_field = dcnet(&["train", "--config", s(&cfg), "--set", "train.nope=3"], None);
    assert_eq!(code(&bad_field), 1);
    let bad_value = dcnet(&["train", "--config", s(&cfg), "--batch-size", "0"], None);
    assert_eq!(code(&bad_value), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pten");
    let o = dcnet(
        &["degrade", "--truth", s(&missing), "--pan", s(&missing), "--out", s(dir.path())],
        None,
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.pten"));

    let garbage = dir.path().join("garbage.pten");
    std::fs::write(&garbage, b"not a tensor").unwrap();
    let o = dcnet(
        &["evaluate", "--fused", s(&garbage), "--reference", s(&garbage), "--out", s(dir.path())],
        None,
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &dir.path().join("o"), json!({"epochs": 20}));
    let o = dcnet(&["train", "--config", s(&cfg), "--lr", "1e30", "--quiet"], None);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (env_dir, flag_dir) = (dir.path().join("env"), dir.path().join("flag"));

    let o = dcnet(&["synth", "--seed", "1", "--height", "8"], Some(&env_dir));
    assert_eq!(code(&o), 0);
    assert!(env_dir.join("scene_truth.pten").exists());
    let o = dcnet(&["synth", "--seed", "1", "--height", "8", "--out", s(&flag_dir)], Some(&env_dir));
    assert_eq!(code(&o), 0);
    assert!(flag_dir.join("scene_truth.pten").exists());
    assert_eq!(code(&dcnet(&["synth", "--seed", "1"], None)), 1);

    let file_dir = dir.path().join("file");
    let cfg = write_config(dir.path(), &file_dir, json!({}));
    let train_env = dir.path().join("train_env");
    assert_eq!(code(&dcnet(&["train", "--config", s(&cfg), "--quiet"], None)), 0);
    assert!(file_dir.join("manifest.json").exists());
    assert_eq!(code(&dcnet(&["train", "--config", s(&cfg), "--quiet"], Some(&train_env))), 0);
    assert!(train_env.join("manifest.json").exists());
    let train_flag = dir.path().join("train_flag");
    let o = dcnet(&["train", "--config", s(&cfg), "--quiet", "--out", s(&train_flag)], Some(&train_env));
    assert_eq!(code(&o), 0);
    assert!(train_flag.join("manifest.json").exists());
}

#[test]
fn pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p);
    assert_eq!(code(&dcnet(&["synth", "--seed", "4", "--height", "32", "--out", s(&d("raw"))], None)), 0);
    let o = dcnet(
        &[
            "degrade",
            "--truth",
            s(&d("raw/scene_truth.pten")),
            "--pan",
            s(&d("raw/scene_pan_full.pten")),
            "--out",
            s(&d("scenes")),
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d("scenes/scene.pten").exists());

    let cfg = json!({
        "model": "tiny",
        "train": {"seed": 2, "epochs": 2, "batch_size": 4},
        "data": {"source": {"scenes": "scenes"}, "split": {"train": 1, "val": 0, "test": 1}, "patch_size": 16},
        "output_dir": "run"
    });
    std::fs::write(d("exp.json"), serde_json::to_vec(&cfg).unwrap()).unwrap();
    let o = dcnet(&["train", "--config", s(&d("exp.json")), "--quiet"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d("run/best.pten").exists());

    let o = dcnet(
        &[
            "sharpen",
            "--checkpoint",
            s(&d("run/best.pten")),
            "--scene",
            s(&d("scenes/scene.pten")),
            "--out",
            s(&d("fused/scene.pten")),
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = dcnet(
        &[
            "evaluate",
            "--fused",
            s(&d("fused/scene.pten")),
            "--scene",
            s(&d("scenes/scene.pten")),
            "--mode",
            "both",
            "--out",
            s(&d("metrics")),
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d("metrics/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
