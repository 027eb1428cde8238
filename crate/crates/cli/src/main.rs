use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wdsrkit::budget::budget_report;
use wdsrkit::checkpoint::{load_checkpoint, save_checkpoint};
use wdsrkit::config::RunConfig;
use wdsrkit::data::{prepare_dataset, Manifest};
use wdsrkit::gradcheck::{run_gradcheck, GradCheckOptions};
use wdsrkit::network::Model;
use wdsrkit::parallel::{init_thread_pool, threads_from_env};
use wdsrkit::train::{self, bicubic_psnr, evaluate_psnr, format_db, CsvSink, PairSet, TrainStatus};
use wdsrkit::{Error, ErrorCategory, OpKind, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_INTERNAL: u8 = 1;

const CONFIG_ECHO: &str = "config.txt";
const METRICS: &str = "metrics.csv";
const FINAL_CHECKPOINT: &str = "model.ckpt";

/// Wide-activation super-resolution experiments.
#[derive(Parser, Debug)]
#[command(name = "wdsrkit", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for initialization and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Crop HR images, synthesize bicubic LR copies and write manifests.
    Prepare {
        /// Directory of HR PNG images.
        #[arg(long, value_name = "DIR")]
        hr_dir: PathBuf,
        /// Downscaling factor; defaults to `net.scale`.
        #[arg(long)]
        scale: Option<usize>,
        /// Images held out for validation (last in name order).
        #[arg(long, default_value_t = 5)]
        val_count: usize,
    },
    /// Per-layer parameter and Mult-Add report.
    Budget,
    /// Train a network; writes metrics, checkpoints and the echoed config.
    Train,
    /// PSNR of a checkpoint against a manifest, next to bicubic upsampling.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Defaults to `data.val_manifest`.
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
    },
    /// Finite-difference check of every backward rule.
    Gradcheck {
        /// Scale one op's backward rule, as `NAME[:FACTOR]`.
        #[arg(long, hide = true, value_name = "OP")]
        corrupt_op: Option<String>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(w) = cfg.net.narrow_identity_warning() {
        log::warn!("{w}");
    }
    Ok(cfg)
}

fn require_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("--out DIR is required for this command".into()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn cmd_prepare(
    common: &Common,
    hr_dir: &Path,
    scale: Option<usize>,
    val_count: usize,
) -> Result<()> {
    let cfg = load_config(common)?;
    let out = require_out(common)?;
    let scale = scale.unwrap_or(cfg.net.scale);
    let prep = prepare_dataset(hr_dir, out, scale, val_count)?;
    let [r, g, b] = prep.train.rgb_mean;
    println!("train images: {}", prep.train.records.len());
    println!("val images:   {}", prep.val.records.len());
    println!("skipped:      {}", prep.skipped().len());
    for (file, reason) in prep.skipped() {
        println!("  {file}: {reason}");
    }
    println!("rgb_mean:     {r:.4} {g:.4} {b:.4}");
    println!("train manifest: {}", prep.train_path.display());
    println!("val manifest:   {}", prep.val_path.display());
    Ok(())
}

fn cmd_budget(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    cfg.net.validate()?;
    print!("{}", budget_report(&cfg.net, cfg.budget_input)?);
    Ok(())
}

/// Returns whether training completed without diverging.
fn cmd_train(common: &Common) -> Result<bool> {
    let mut cfg = load_config(common)?;
    let out = require_out(common)?;
    let train_path = cfg
        .train_manifest
        .clone()
        .ok_or_else(|| Error::Config("data.train_manifest is not set".into()))?;
    let train_manifest = Manifest::read(&train_path)?;
    if cfg.rgb_mean_auto {
        cfg.net.rgb_mean = train_manifest.rgb_mean;
        cfg.rgb_mean_auto = false;
    }
    if cfg.lr_auto {
        cfg.train = cfg.train_config();
        cfg.lr_auto = false;
    }
    cfg.validate()?;
    let data = PairSet::from_manifest(&train_manifest)?;
    let val = match &cfg.val_manifest {
        Some(p) => Manifest::read(p)?.load_pairs()?,
        None => Vec::new(),
    };

    create_dir(&out.join("checkpoints"))?;
    write_file(&out.join(CONFIG_ECHO), &cfg.to_text())?;
    let mut model = Model::<f32>::from_seed(cfg.net.clone(), cfg.train.seed)?;
    let sink = CsvSink::create(&out.join(METRICS))?;
    let ckpt_dir = out.join("checkpoints");
    let total = cfg.train.max_steps;
    let mut snapshot = |m: &Model<f32>, step: u64| {
        log::info!("step {step}/{total}: checkpoint");
        save_checkpoint(m, step, &ckpt_dir.join(format!("step_{step:07}.ckpt")))
    };
    let report = train::train(&mut model, &data, &val, &cfg.train, &sink, &mut snapshot)?;
    sink.flush()?;
    save_checkpoint(&model, report.model_step, &out.join(FINAL_CHECKPOINT))?;

    let tail = report.losses.len().min(100);
    let recent = train::mean(&report.losses[report.losses.len() - tail..]);
    println!("steps:      {}", report.losses.len());
    println!("final L1:   {recent:.4} (mean of last {tail} steps)");
    if let Some(&(step, psnr)) = report.validations.last() {
        println!("val PSNR:   {} dB at step {step}", format_db(psnr));
    }
    println!("checkpoint: {}", out.join(FINAL_CHECKPOINT).display());
    match report.status {
        TrainStatus::Completed => Ok(true),
        TrainStatus::Diverged { step, reason } => {
            eprintln!(
                "diverged at step {step}: {reason}; kept the model from step {}",
                report.model_step
            );
            Ok(false)
        }
    }
}

fn cmd_eval(common: &Common, checkpoint: &Path, manifest: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let manifest_path = manifest
        .map(Path::to_path_buf)
        .or(cfg.val_manifest.clone())
        .ok_or_else(|| Error::Config("pass --manifest or set data.val_manifest".into()))?;
    let manifest = Manifest::read(&manifest_path)?;
    let (mut model, step) = load_checkpoint(checkpoint)?;
    if let Some(s) = manifest.scale() {
        if s != model.spec.scale {
            return Err(Error::Config(format!(
                "manifest scale {s} does not match checkpoint scale {}",
                model.spec.scale
            )));
        }
    }
    let pairs = manifest.load_pairs()?;
    let shave = cfg.train.shave;
    let ours = evaluate_psnr(&mut model, &pairs, shave)?;
    let bicubic = bicubic_psnr(&pairs, model.spec.scale, shave)?;
    println!("checkpoint step {step}, {} images", pairs.len());
    println!("{:<32} {:>10} {:>10}", "image", "psnr", "bicubic");
    for ((rec, p), b) in manifest.records.iter().zip(&ours).zip(&bicubic) {
        let name = rec.hr.file_name().unwrap_or_default().to_string_lossy();
        println!("{name:<32} {:>10} {:>10}", format_db(*p), format_db(*b));
    }
    println!(
        "{:<32} {:>10} {:>10}",
        "mean",
        format_db(train::mean(&ours)),
        format_db(train::mean(&bicubic))
    );
    Ok(())
}

fn parse_corruption(arg: &str) -> Result<(OpKind, f64)> {
    let (name, factor) = arg.split_once(':').unwrap_or((arg, "1.1"));
    let kind =
        OpKind::from_name(name).ok_or_else(|| Error::Config(format!("unknown op `{name}`")))?;
    let factor = factor
        .parse()
        .map_err(|_| Error::Config(format!("bad corruption factor `{factor}`")))?;
    Ok((kind, factor))
}

/// Returns whether every check passed.
fn cmd_gradcheck(common: &Common, corrupt: Option<&str>) -> Result<bool> {
    let cfg = load_config(common)?;
    cfg.net.validate()?;
    let opts = GradCheckOptions {
        seed: cfg.train.seed,
        corrupt: corrupt.map(parse_corruption).transpose()?,
        ..Default::default()
    };
    let report = run_gradcheck(&cfg.net, &opts)?;
    println!("{report}");
    println!(
        "families: {}",
        report
            .families_covered()
            .into_iter()
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(report.passed() && report.ops_missing().is_empty())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => EXIT_CONFIG,
        ErrorCategory::Data => EXIT_DATA,
        ErrorCategory::Numerical => EXIT_NUMERICAL,
        ErrorCategory::Internal => EXIT_INTERNAL,
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let threads = threads_from_env()?;
    let n = init_thread_pool(threads);
    log::debug!("{n} worker threads");
    let c = &cli.common;
    match &cli.command {
        Command::Prepare {
            hr_dir,
            scale,
            val_count,
        } => cmd_prepare(c, hr_dir, *scale, *val_count).map(|_| true),
        Command::Budget => cmd_budget(c).map(|_| true),
        Command::Train => cmd_train(c),
        Command::Eval {
            checkpoint,
            manifest,
        } => cmd_eval(c, checkpoint, manifest.as_deref()).map(|_| true),
        Command::Gradcheck { corrupt_op } => cmd_gradcheck(c, corrupt_op.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NUMERICAL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
