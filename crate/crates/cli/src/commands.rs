//! The subcommands, callable without going through argument parsing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use dcnet_core::data::pnm::{gray_from_tensor, preview_bands, rgb_from_bands};
use dcnet_core::data::{
    degrade_wald, denormalize, downsample, normalize, read_tensor, synth_scene, upsample_ms,
    write_tensor, SceneTriple, DN_RANGE, RATIO,
};
use dcnet_core::metrics::{
    ergas, fit_window, q2n, sam, scc, uiqi_bands, QnrParams, QnrReport,
};
use dcnet_core::model::{Backbone, Dcnet, FusionOp, ModelConfig};
use dcnet_core::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Precision};
use crate::dataset::{read_scene, write_scene, Dataset};
use crate::error::{CliError, Context, Result};
use crate::manifest::{run_experiment, RunManifest};
use crate::train::{EpochRecord, Status};

const PREVIEW_MAX: u16 = 255;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)
}

fn write_gray(path: &Path, img: &Tensor<f64>, range: (f64, f64)) -> Result<()> {
    gray_from_tensor(img, range, PREVIEW_MAX)?.write(path).at(path)
}

fn write_rgb(path: &Path, img: &Tensor<f64>, range: (f64, f64)) -> Result<()> {
    rgb_from_bands(img, preview_bands(img.shape()[0]), range, PREVIEW_MAX)?
        .write(path)
        .at(path)
}

/// Files written by [`synth`].
pub struct SynthOutput {
    pub truth: PathBuf,
    pub pan_full: PathBuf,
}

/// A synthetic acquisition: reference MS `[B, H, W]` and full-resolution
/// PAN `[4H, 4W]`, in digital numbers, plus 8-bit previews.
pub fn synth(
    out: &Path,
    name: &str,
    seed: u64,
    bands: usize,
    height: usize,
    width: usize,
) -> Result<SynthOutput> {
    create_dir(out)?;
    let (truth, pan_full) = synth_scene::<f64>(seed, bands, height, width)?;
    let files = SynthOutput {
        truth: out.join(format!("{name}_truth.pten")),
        pan_full: out.join(format!("{name}_pan_full.pten")),
    };
    write_tensor(&files.truth, &truth).at(&files.truth)?;
    write_tensor(&files.pan_full, &pan_full).at(&files.pan_full)?;
    write_rgb(&out.join(format!("{name}_truth.ppm")), &truth, DN_RANGE)?;
    write_gray(&out.join(format!("{name}_pan_full.pgm")), &pan_full, DN_RANGE)?;
    Ok(files)
}

/// Wald degradation of a reference MS and its full-resolution PAN into a
/// scene archive `<out>/<name>.pten` with PGM/PPM previews of each part.
pub fn degrade(
    truth: &Path,
    pan_full: &Path,
    out: &Path,
    name: &str,
    range: (f64, f64),
) -> Result<PathBuf> {
    let t = read_tensor::<f64>(truth).at(truth)?;
    let p = read_tensor::<f64>(pan_full).at(pan_full)?;
    let scene = degrade_wald(&t, &p, range)?;
    create_dir(out)?;
    let path = out.join(format!("{name}.pten"));
    write_scene(&path, &scene)?;
    write_gray(&out.join(format!("{name}_pan.pgm")), &scene.pan, range)?;
    write_rgb(&out.join(format!("{name}_ms.ppm")), &scene.ms, range)?;
    if let Some(t) = &scene.truth {
        write_rgb(&out.join(format!("{name}_truth.ppm")), t, range)?;
    }
    Ok(path)
}

fn with_precision<R>(
    p: Precision,
    f32_case: impl FnOnce() -> Result<R>,
    f64_case: impl FnOnce() -> Result<R>,
) -> Result<R> {
    match p {
        Precision::F32 => f32_case(),
        Precision::F64 => f64_case(),
    }
}

fn log_epoch(prefix: &str, total: usize) -> impl FnMut(&EpochRecord) + '_ {
    move |r: &EpochRecord| {
        let val = r.val_l1.map(|v| format!(" val_l1={v:.6}")).unwrap_or_default();
        eprintln!(
            "{prefix}epoch {}/{total} lr={:.2e} train_l1={:.6}{val}",
            r.epoch, r.lr, r.train_l1
        );
    }
}

/// Trains the experiment into `cfg.output_dir`.
pub fn train(cfg: &ExperimentConfig, resume: bool, quiet: bool) -> Result<RunManifest> {
    let total = cfg.train.epochs;
    let mut log = log_epoch("", total);
    let on_epoch = |r: &EpochRecord| {
        if !quiet {
            log(r)
        }
    };
    let dir = &cfg.output_dir;
    match cfg.train.precision {
        Precision::F32 => run_experiment(cfg, &Dataset::<f32>::build(cfg)?, dir, resume, on_epoch),
        Precision::F64 => run_experiment(cfg, &Dataset::<f64>::build(cfg)?, dir, resume, on_epoch),
    }
}

/// Where `sharpen` and `evaluate` take PAN and MS from.
#[derive(Clone, Debug)]
pub enum Inputs {
    Scene(PathBuf),
    Files { pan: PathBuf, ms: PathBuf },
}

impl Inputs {
    fn load(&self) -> Result<(Tensor<f64>, Tensor<f64>, Option<Tensor<f64>>, (f64, f64))> {
        match self {
            Inputs::Scene(p) => {
                let s = read_scene::<f64>(p)?;
                Ok((s.pan, s.ms, s.truth, s.value_range))
            }
            Inputs::Files { pan, ms } => Ok((
                read_tensor(pan).at(pan)?,
                read_tensor(ms).at(ms)?,
                None,
                DN_RANGE,
            )),
        }
    }
}

/// Runs a checkpoint on one PAN/MS pair and writes the sharpened `[B, H, W]`
/// image to `out` with an RGB preview next to it.
pub fn sharpen(
    checkpoint: &Path,
    inputs: &Inputs,
    range: Option<(f64, f64)>,
    out: &Path,
) -> Result<Tensor<f64>> {
    let model = Dcnet::<f32>::load(checkpoint).at(checkpoint)?;
    let (pan, ms, _, scene_range) = inputs.load()?;
    let range = range.unwrap_or(scene_range);
    let scene = SceneTriple::new(pan, ms, None, RATIO, range)?;
    if scene.bands() != model.config.bands {
        return Err(CliError::Core(dcnet_core::Error::Dimension {
            op: "sharpen",
            axis: "bands".into(),
            expected: format!("{} (checkpoint)", model.config.bands),
            actual: scene.bands().to_string(),
        }));
    }
    let (b, h, w) = (scene.bands(), scene.height(), scene.width());
    let pan = normalize(&scene.pan.cast::<f32>(), range)?.into_reshaped(&[1, 1, h, w])?;
    let ms_up = upsample_ms(&normalize(&scene.ms.cast::<f32>(), range)?)?.into_reshaped(&[1, b, h, w])?;
    let fused = model.predict_prepared(&pan, &ms_up)?;
    let fused = denormalize(&fused.cast::<f64>().into_reshaped(&[b, h, w])?, range)?;
    if !fused.all_finite() {
        return Err(dcnet_core::Error::NonFinite("sharpened output".into()).into());
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_tensor(out, &fused).at(out)?;
    write_rgb(&out.with_extension("ppm"), &fused, range)?;
    Ok(fused)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Whatever the inputs allow.
    Auto,
    Full,
    Qnr,
    Both,
}

/// One scene's metrics; a column is empty when its mode did not run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scene: String,
    pub q2n: Option<f64>,
    pub uiqi: Option<f64>,
    pub sam_deg: Option<f64>,
    pub ergas: Option<f64>,
    pub scc: Option<f64>,
    pub d_lambda: Option<f64>,
    pub d_s: Option<f64>,
    pub qnr: Option<f64>,
}

pub const METRIC_COLUMNS: [&str; 8] =
    ["q2n", "uiqi", "sam_deg", "ergas", "scc", "d_lambda", "d_s", "qnr"];

impl MetricRow {
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            self.q2n,
            self.uiqi,
            self.sam_deg,
            self.ergas,
            self.scc,
            self.d_lambda,
            self.d_s,
            self.qnr,
        ]
    }

    fn from_values(scene: String, v: [Option<f64>; 8]) -> Self {
        Self {
            scene,
            q2n: v[0],
            uiqi: v[1],
            sam_deg: v[2],
            ergas: v[3],
            scc: v[4],
            d_lambda: v[5],
            d_s: v[6],
            qnr: v[7],
        }
    }

    /// Column-wise mean; a column is kept only if every row has it.
    pub fn mean(rows: &[MetricRow]) -> MetricRow {
        let mut out = [None; 8];
        for (c, o) in out.iter_mut().enumerate() {
            let col: Option<Vec<f64>> = rows.iter().map(|r| r.values()[c]).collect();
            *o = col
                .filter(|v| !v.is_empty())
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
        }
        Self::from_values("mean".into(), out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub window: usize,
    pub ratio: usize,
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
}

/// One scene to score.
#[derive(Clone, Debug)]
pub struct EvalCase {
    pub name: String,
    pub fused: PathBuf,
    pub reference: Option<PathBuf>,
    pub inputs: Option<Inputs>,
}

fn pten_files(dir: &Path) -> Result<Vec<PathBuf>> {
    crate::dataset::scene_files(dir)
}

/// Pairs fused images with references and inputs. With a directory of fused
/// images the other paths must be directories holding files of the same name.
pub fn eval_cases(
    fused: &Path,
    reference: Option<&Path>,
    scene: Option<&Path>,
    pan_ms: Option<(&Path, &Path)>,
) -> Result<Vec<EvalCase>> {
    if !fused.is_dir() {
        let inputs = match (scene, pan_ms) {
            (Some(s), _) => Some(Inputs::Scene(s.to_path_buf())),
            (None, Some((p, m))) => Some(Inputs::Files {
                pan: p.to_path_buf(),
                ms: m.to_path_buf(),
            }),
            (None, None) => None,
        };
        let name = fused
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(vec![EvalCase {
            name,
            fused: fused.to_path_buf(),
            reference: reference.map(Path::to_path_buf),
            inputs,
        }]);
    }
    if pan_ms.is_some() {
        return Err(CliError::usage(
            "--pan/--ms name single files; use --scene DIR with a directory of fused images",
        ));
    }
    for (flag, p) in [("--reference", reference), ("--scene", scene)] {
        if let Some(p) = p.filter(|p| !p.is_dir()) {
            return Err(CliError::usage(format!(
                "{flag} {} must be a directory when --fused is one",
                p.display()
            )));
        }
    }
    pten_files(fused)?
        .into_iter()
        .map(|f| {
            let file = f.file_name().expect("listed file").to_owned();
            Ok(EvalCase {
                name: f
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                reference: reference.map(|d| d.join(&file)),
                inputs: scene.map(|d| Inputs::Scene(d.join(&file))),
                fused: f,
            })
        })
        .collect()
}

/// Full-reference metrics when a reference is known, the QNR family when
/// PAN and MS are, both when asked and available.
pub fn evaluate(cases: &[EvalCase], mode: EvalMode, window: usize) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(CliError::usage("nothing to evaluate"));
    }
    let mut rows = Vec::with_capacity(cases.len());
    let mut used_window = window;
    for case in cases {
        let fused = read_tensor::<f64>(&case.fused).at(&case.fused)?;
        if fused.ndim() != 3 {
            return Err(CliError::File {
                path: case.fused.clone(),
                source: dcnet_core::Error::Dimension {
                    op: "evaluate",
                    axis: "rank".into(),
                    expected: "3 ([B, H, W])".into(),
                    actual: fused.ndim().to_string(),
                },
            });
        }
        let loaded = case.inputs.as_ref().map(Inputs::load).transpose()?;
        let reference = match (&case.reference, &loaded) {
            (Some(r), _) => Some(read_tensor::<f64>(r).at(r)?),
            (None, Some((_, _, truth, _))) => truth.clone(),
            _ => None,
        };
        let want_full = matches!(mode, EvalMode::Full | EvalMode::Both);
        let want_qnr = matches!(mode, EvalMode::Qnr | EvalMode::Both);
        if want_full && reference.is_none() {
            return Err(CliError::usage(format!(
                "{}: full-reference mode needs --reference or a scene with a reference",
                case.name
            )));
        }
        if want_qnr && loaded.is_none() {
            return Err(CliError::usage(format!(
                "{}: QNR mode needs --pan and --ms, or --scene",
                case.name
            )));
        }
        if reference.is_none() && loaded.is_none() {
            return Err(CliError::usage(format!(
                "{}: give a reference for full-reference metrics or PAN and MS for QNR",
                case.name
            )));
        }
        let (h, w) = (fused.shape()[1], fused.shape()[2]);
        used_window = fit_window(window, h, w);
        let mut row = MetricRow {
            scene: case.name.clone(),
            ..MetricRow::default()
        };
        let run_full = want_full || (mode == EvalMode::Auto && reference.is_some());
        let run_qnr = want_qnr || (mode == EvalMode::Auto && loaded.is_some());
        if run_full {
            let r = reference.as_ref().expect("checked above");
            row.q2n = Some(q2n(&fused, r, used_window)?);
            row.uiqi = Some(uiqi_bands(&fused, r, used_window)?);
            row.sam_deg = Some(sam(&fused, r)?);
            row.ergas = Some(ergas(&fused, r, RATIO)?);
            row.scc = Some(scc(&fused, r)?);
        }
        if run_qnr {
            let (pan, ms, _, _) = loaded.as_ref().expect("checked above");
            let pan_low = downsample(pan)?;
            let params = QnrParams {
                window: used_window,
                ..QnrParams::default()
            };
            let QnrReport { d_lambda, d_s, qnr } = params.evaluate(&fused, ms, pan, &pan_low)?;
            row.d_lambda = Some(d_lambda);
            row.d_s = Some(d_s);
            row.qnr = Some(qnr);
        }
        if row.values().iter().flatten().any(|v| !v.is_finite()) {
            return Err(dcnet_core::Error::NonFinite(format!("metrics of {}", case.name)).into());
        }
        rows.push(row);
    }
    let mean = MetricRow::mean(&rows);
    Ok(EvalReport {
        window: used_window,
        ratio: RATIO,
        rows,
        mean,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `metrics.json` and `metrics.csv` in `out`.
pub fn write_eval_report(out: &Path, report: &EvalReport) -> Result<()> {
    create_dir(out)?;
    let json = out.join("metrics.json");
    dcnet_core::data::io::write_atomic(&json, &serde_json::to_vec_pretty(report)?).at(&json)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["scene"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for row in report.rows.iter().chain([&report.mean]) {
        let mut rec = vec![row.scene.clone()];
        rec.extend(row.values().map(cell));
        w.write_record(&rec)?;
    }
    let csv_path = out.join("metrics.csv");
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Csv(e.into_error().into()))?;
    dcnet_core::data::io::write_atomic(&csv_path, &bytes).at(&csv_path)
}

/// Ablation axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Backbone,
    FusionLevels,
    FusionOp,
    NumLevels,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Backbone => "backbone",
            Axis::FusionLevels => "fusion_levels",
            Axis::FusionOp => "fusion_op",
            Axis::NumLevels => "num_levels",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        [Axis::Backbone, Axis::FusionLevels, Axis::FusionOp, Axis::NumLevels]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                CliError::usage(format!(
                    "unknown axis `{s}` (backbone, fusion_levels, fusion_op, num_levels)"
                ))
            })
    }
}

/// One model of an ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub model: ModelConfig,
}

fn level_set(levels: &BTreeSet<usize>) -> String {
    let items: Vec<String> = levels.iter().map(usize::to_string).collect();
    format!("{{{}}}", items.join(","))
}

/// The variants of `axis` around `base`:
/// - backbone: 2D/3D and 2D/2D
/// - fusion_levels: `{L}`, `{L-1, L}`, ..., `{1..L}`
/// - fusion_op: sum, max, average, product, conv, s2clstm
/// - num_levels: 1 to 6 levels, fusing at each
pub fn variants(base: &ModelConfig, axis: Axis) -> Vec<Variant> {
    let with = |label: String, model: ModelConfig| Variant { label, model };
    match axis {
        Axis::Backbone => [Backbone::Planar3d, Backbone::Planar2d]
            .into_iter()
            .map(|b| {
                with(
                    b.name().into(),
                    ModelConfig {
                        backbone: b,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        Axis::FusionLevels => (1..=base.levels)
            .rev()
            .map(|from| {
                let set: BTreeSet<usize> = (from..=base.levels).collect();
                with(
                    level_set(&set),
                    ModelConfig {
                        fusion_levels: set,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        Axis::FusionOp => FusionOp::ALL
            .into_iter()
            .map(|op| {
                with(
                    op.name().into(),
                    ModelConfig {
                        fusion_op: op,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        Axis::NumLevels => (1..=6)
            .map(|l| with(l.to_string(), base.clone().with_levels(l)))
            .collect(),
    }
}

/// One line of an ablation CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub variant: String,
    /// `completed`, `budget_exhausted` or `failed`.
    pub status: String,
    pub epochs_run: Option<usize>,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
    /// Normalized l1 on the evaluation split.
    pub l1: Option<f64>,
    pub metrics: MetricRow,
    pub error: String,
}

pub const ABLATION_COLUMNS: [&str; 16] = [
    "axis",
    "variant",
    "status",
    "epochs_run",
    "best_epoch",
    "best_score",
    "l1",
    "q2n",
    "uiqi",
    "sam_deg",
    "ergas",
    "scc",
    "d_lambda",
    "d_s",
    "qnr",
    "error",
];

impl AblationRow {
    fn from_manifest(axis: Axis, label: &str, m: &RunManifest) -> Self {
        let r = &m.evaluation.mean;
        Self {
            axis: axis.name().into(),
            variant: label.into(),
            status: match m.status {
                Status::Completed => "completed",
                Status::BudgetExhausted => "budget_exhausted",
            }
            .into(),
            epochs_run: Some(m.epochs_run),
            best_epoch: Some(m.best_epoch),
            best_score: Some(m.best_score),
            l1: Some(m.evaluation.l1),
            metrics: MetricRow {
                scene: label.into(),
                q2n: Some(r.q2n),
                uiqi: Some(r.uiqi),
                sam_deg: Some(r.sam_deg),
                ergas: Some(r.ergas),
                scc: Some(r.scc),
                d_lambda: r.d_lambda,
                d_s: r.d_s,
                qnr: r.qnr,
            },
            error: String::new(),
        }
    }

    fn failed(axis: Axis, label: &str, e: &CliError) -> Self {
        Self {
            axis: axis.name().into(),
            variant: label.into(),
            status: "failed".into(),
            epochs_run: None,
            best_epoch: None,
            best_score: None,
            l1: None,
            metrics: MetricRow {
                scene: label.into(),
                ..MetricRow::default()
            },
            error: e.to_string(),
        }
    }

    fn record(&self) -> Vec<String> {
        let mut rec = vec![
            self.axis.clone(),
            self.variant.clone(),
            self.status.clone(),
            self.epochs_run.map(|v| v.to_string()).unwrap_or_default(),
            self.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
            cell(self.best_score),
            cell(self.l1),
        ];
        rec.extend(self.metrics.values().map(cell));
        rec.push(self.error.clone());
        rec
    }
}

/// Directory name of a variant: `{2,3,4}` becomes `levels_2_3_4`.
fn variant_dir(label: &str) -> String {
    if label.starts_with('{') {
        let digits: Vec<&str> = label
            .trim_matches(|c| c == '{' || c == '}')
            .split(',')
            .collect();
        format!("levels_{}", digits.join("_"))
    } else {
        label.to_string()
    }
}

/// Trains and evaluates every variant of `axis` from scratch with the
/// experiment's seed and budget, `jobs` at a time, and writes
/// `<output_dir>/ablation_<axis>.csv`. A failing variant gets a `failed` row
/// and the others still run.
pub fn ablate(cfg: &ExperimentConfig, axis: Axis, jobs: usize, quiet: bool) -> Result<Vec<AblationRow>> {
    let out = &cfg.output_dir;
    create_dir(out)?;
    let rows = with_precision(
        cfg.train.precision,
        || run_variants::<f32>(cfg, axis, jobs, quiet),
        || run_variants::<f64>(cfg, axis, jobs, quiet),
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ABLATION_COLUMNS)?;
    for row in &rows {
        w.write_record(row.record())?;
    }
    let path = out.join(format!("ablation_{}.csv", axis.name()));
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Csv(e.into_error().into()))?;
    dcnet_core::data::io::write_atomic(&path, &bytes).at(&path)?;
    Ok(rows)
}

fn run_variants<T: Real>(
    cfg: &ExperimentConfig,
    axis: Axis,
    jobs: usize,
    quiet: bool,
) -> Result<Vec<AblationRow>> {
    let data = Dataset::<T>::build(cfg)?;
    let list = variants(&cfg.model, axis);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<AblationRow>>> = Mutex::new(vec![None; list.len()]);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(v) = list.get(i) else { break };
        let mut vc = cfg.clone();
        vc.model = v.model.clone();
        vc.output_dir = cfg.output_dir.join(axis.name()).join(variant_dir(&v.label));
        let prefix = format!("[{} {}] ", axis.name(), v.label);
        let mut log = log_epoch(&prefix, vc.train.epochs);
        let result = vc.model.validate().map_err(CliError::from).and_then(|_| {
            run_experiment(&vc, &data, &vc.output_dir, false, |r| {
                if !quiet {
                    log(r)
                }
            })
        });
        let row = match result {
            Ok(m) => AblationRow::from_manifest(axis, &v.label, &m),
            Err(e) => {
                eprintln!("{prefix}failed: {e}");
                AblationRow::failed(axis, &v.label, &e)
            }
        };
        if !quiet {
            eprintln!("{prefix}{}", row.status);
        }
        results.lock().expect("no worker panics while holding the lock")[i] = Some(row);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1).min(list.len()) {
            s.spawn(worker);
        }
        worker();
    });
    Ok(results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every variant ran"))
        .collect())
}
