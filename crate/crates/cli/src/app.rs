//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{self, EvalMode, Inputs};
use crate::config::{ExperimentConfig, Override};
use crate::error::{CliError, Result};

/// Environment variable overriding the output location of every command.
pub const OUT_ENV: &str = "DCNET_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "dcnet", version, about = "Pan-sharpening with a dual-channel 2D/3D network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a reference MS image and its full-resolution PAN.
    Synth(SynthArgs),
    /// Degrade a reference MS and PAN into a training scene.
    Degrade(DegradeArgs),
    /// Train a model from an experiment config.
    Train(TrainArgs),
    /// Sharpen a PAN/MS pair with a trained checkpoint.
    Sharpen(SharpenArgs),
    /// Score fused images with full-reference and/or QNR metrics.
    Evaluate(EvaluateArgs),
    /// Train and score every variant along one ablation axis.
    Ablate(AblateArgs),
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("`{s}` is not lo,hi"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi}: {e}"))?;
    if !(hi > lo) {
        return Err(format!("empty range {lo},{hi}"));
    }
    Ok((lo, hi))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub bands: usize,
    /// Height of the reference MS; the PAN is four times larger.
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Defaults to the height.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value = "scene")]
    pub name: String,
    #[arg(long, env = OUT_ENV)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// Reference MS `[B, H, W]`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Full-resolution PAN `[4H, 4W]`.
    #[arg(long)]
    pub pan: PathBuf,
    /// Scene name; defaults to the truth file name without `_truth`.
    #[arg(long)]
    pub name: Option<String>,
    /// Value range as lo,hi.
    #[arg(long, value_parser = parse_range, default_value = "0,2047")]
    pub range: (f64, f64),
    #[arg(long, env = OUT_ENV)]
    pub out: PathBuf,
}

/// Flags shared by `train` and `ablate`; each overrides the config file.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_seconds: Option<f64>,
    /// Any config field as dotted.path=value, e.g. model.levels=3.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
    /// Output directory; beats the config file.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

impl ExperimentArgs {
    pub fn overrides(&self) -> Result<Vec<Override>> {
        let mut o = Vec::new();
        let mut flag = |path: &str, v: Option<serde_json::Value>| {
            if let Some(v) = v {
                o.push(Override::new(path, v));
            }
        };
        flag("train.epochs", self.epochs.map(Into::into));
        flag("train.batch_size", self.batch_size.map(Into::into));
        flag("train.base_lr", self.lr.map(Into::into));
        flag("train.lambda", self.lambda.map(Into::into));
        flag("train.seed", self.seed.map(Into::into));
        flag("train.max_seconds", self.max_seconds.map(Into::into));
        flag(
            "output_dir",
            self.out
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned().into()),
        );
        // --set is applied first so the dedicated flags win
        let mut all = self
            .set
            .iter()
            .map(|s| Override::parse(s))
            .collect::<Result<Vec<_>>>()?;
        all.extend(o);
        Ok(all)
    }

    pub fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides()?)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Continue from the snapshot in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct SharpenArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene archive holding PAN and MS.
    #[arg(long, conflicts_with_all = ["pan", "ms"])]
    pub scene: Option<PathBuf>,
    #[arg(long, requires = "ms")]
    pub pan: Option<PathBuf>,
    #[arg(long, requires = "pan")]
    pub ms: Option<PathBuf>,
    /// Value range as lo,hi; defaults to the scene's, else 0,2047.
    #[arg(long, value_parser = parse_range)]
    pub range: Option<(f64, f64)>,
    /// Output tensor; an RGB preview is written beside it as .ppm.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Auto,
    Full,
    Qnr,
    Both,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Fused image, or a directory of them.
    #[arg(long)]
    pub fused: PathBuf,
    /// Reference image (or directory with matching file names).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Scene archive (or directory) giving PAN, MS and possibly a reference.
    #[arg(long, conflicts_with_all = ["pan", "ms"])]
    pub scene: Option<PathBuf>,
    #[arg(long, requires = "ms")]
    pub pan: Option<PathBuf>,
    #[arg(long, requires = "pan")]
    pub ms: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub mode: ModeArg,
    /// Block size of UIQI and Q2^n, shrunk to fit small images.
    #[arg(long, default_value_t = dcnet_core::metrics::WINDOW)]
    pub window: usize,
    /// Directory for metrics.json and metrics.csv.
    #[arg(long, env = OUT_ENV)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long)]
    pub axis: String,
    /// Variants trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn inputs(scene: &Option<PathBuf>, pan: &Option<PathBuf>, ms: &Option<PathBuf>) -> Option<Inputs> {
    match (scene, pan, ms) {
        (Some(s), _, _) => Some(Inputs::Scene(s.clone())),
        (None, Some(p), Some(m)) => Some(Inputs::Files {
            pan: p.clone(),
            ms: m.clone(),
        }),
        _ => None,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let f = commands::synth(
                &a.out,
                &a.name,
                a.seed,
                a.bands,
                a.height,
                a.width.unwrap_or(a.height),
            )?;
            println!("{}\n{}", f.truth.display(), f.pan_full.display());
        }
        Command::Degrade(a) => {
            let name = match a.name {
                Some(n) => n,
                None => a
                    .truth
                    .file_stem()
                    .map(|s| s.to_string_lossy().trim_end_matches("_truth").to_string())
                    .filter(|s| !s.is_empty())
                    .unwrap_or_else(|| "scene".into()),
            };
            let path = commands::degrade(&a.truth, &a.pan, &a.out, &name, a.range)?;
            println!("{}", path.display());
        }
        Command::Train(a) => {
            let cfg = a.experiment.load()?;
            let m = commands::train(&cfg, a.resume, a.experiment.quiet)?;
            println!("{}", serde_json::to_string_pretty(&m.evaluation)?);
        }
        Command::Sharpen(a) => {
            let inputs = inputs(&a.scene, &a.pan, &a.ms)
                .ok_or_else(|| CliError::usage("give --scene or both --pan and --ms"))?;
            commands::sharpen(&a.checkpoint, &inputs, a.range, &a.out)?;
            println!("{}", a.out.display());
        }
        Command::Evaluate(a) => {
            let mode = match a.mode {
                ModeArg::Auto => EvalMode::Auto,
                ModeArg::Full => EvalMode::Full,
                ModeArg::Qnr => EvalMode::Qnr,
                ModeArg::Both => EvalMode::Both,
            };
            if a.window == 0 {
                return Err(CliError::usage("--window must be positive"));
            }
            let pan_ms = a.pan.as_deref().zip(a.ms.as_deref());
            let cases =
                commands::eval_cases(&a.fused, a.reference.as_deref(), a.scene.as_deref(), pan_ms)?;
            let report = commands::evaluate(&cases, mode, a.window)?;
            commands::write_eval_report(&a.out, &report)?;
            println!("{}", serde_json::to_string_pretty(&report.mean)?);
        }
        Command::Ablate(a) => {
            let axis = a.axis.parse()?;
            let cfg = a.experiment.load()?;
            let rows = commands::ablate(&cfg, axis, a.jobs, a.experiment.quiet)?;
            let failed = rows.iter().filter(|r| r.status == "failed").count();
            println!(
                "{} variants, {failed} failed: {}",
                rows.len(),
                cfg.output_dir
                    .join(format!("ablation_{}.csv", a.axis))
                    .display()
            );
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
