use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use bravo_core::aggregate::{parse_report, render_comparison, render_report, ReportFormat, Subset};
use bravo_core::io;
use bravo_core::metrics::{DegeneratePolicy, DEFAULT_ECE_BINS};
use bravo_core::oracle::{synth_to_disk, ConfidenceProfile, FixtureSpec};
use bravo_core::pipeline::{self, DecoderKind, EvalOptions, PipelineError};

const EXIT_ITEM_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "bravo-eval", version, about = "Fuse segmentation logits and compute robustness benchmark metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse logits into 8-bit class and confidence maps.
    Fuse(FuseArgs),
    /// Evaluate a manifest and write a report.
    Eval(EvalArgs),
    /// Compare several reports, sorted by BRAVO index.
    Summarize(SummarizeArgs),
    /// Write a synthetic fixture with a manifest.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Decoder {
    Linear,
    Mask2former,
}

impl From<Decoder> for DecoderKind {
    fn from(d: Decoder) -> Self {
        match d {
            Decoder::Linear => DecoderKind::Linear,
            Decoder::Mask2former => DecoderKind::Mask2Former,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Error,
    Zero,
    One,
}

impl From<Policy> for DegeneratePolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Error => DegeneratePolicy::Error,
            Policy::Zero => DegeneratePolicy::Zero,
            Policy::One => DegeneratePolicy::One,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Calibrated,
    Constant,
    Uniform,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output root; maps go to <out>/<subset>/<id>_{pred,conf}.png.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "BRAVO_WORKERS", default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    #[arg(long, value_enum)]
    decoder: Option<Decoder>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Report file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "BRAVO_WORKERS", default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    #[arg(long, default_value_t = DEFAULT_ECE_BINS as u32, value_parser = clap::value_parser!(u32).range(2..))]
    ece_bins: u32,
    #[arg(long, value_enum, default_value = "error")]
    degenerate_policy: Policy,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Fuse from logits of this kind even when fused maps are listed.
    #[arg(long, value_enum)]
    decoder: Option<Decoder>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// JSON reports written by `eval`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 19)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    images_per_subset: usize,
    /// Comma-separated subset keys; all six by default.
    #[arg(long, value_delimiter = ',')]
    subsets: Vec<String>,
    #[arg(long, default_value_t = 0.2)]
    error_rate: f64,
    #[arg(long, value_enum, default_value = "calibrated")]
    profile: Profile,
    /// Confidence for the constant profile.
    #[arg(long, default_value_t = 0.8)]
    confidence: f64,
    /// `lo,hi` for the uniform profile.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.0, 1.0])]
    confidence_range: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    invalid_fraction: f64,
    /// `lo,hi` confidence range for invalid pixels.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    invalid_confidence: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    ignore_fraction: f64,
}

/// An error that maps to a specific exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: error.into(),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Config(_) | PipelineError::Io(io::IoError::Schema { .. }) => config(e),
        other => Failure {
            code: EXIT_ITEM_FAILURE,
            error: other.into(),
        },
    }
}

fn load(path: &Path) -> Result<io::Manifest, Failure> {
    io::load_manifest(path).map_err(config)
}

fn fuse(args: FuseArgs) -> Result<u8, Failure> {
    let manifest = load(&args.manifest)?;
    log::info!("fusing {} items with {} workers", manifest.item_count(), args.workers);
    let outcome = pipeline::fuse_manifest(&manifest, &args.out, args.workers as usize, args.decoder.map(Into::into))
        .map_err(pipeline_failure)?;
    for f in &outcome.failures {
        log::error!("{f}");
    }
    log::info!("wrote {}", outcome.manifest_path.display());
    Ok(if outcome.failures.is_empty() { 0 } else { EXIT_ITEM_FAILURE })
}

fn eval(args: EvalArgs) -> Result<u8, Failure> {
    let manifest = load(&args.manifest)?;
    let opts = EvalOptions {
        ece_bins: args.ece_bins as usize,
        policy: args.degenerate_policy.into(),
        workers: args.workers as usize,
        decoder: args.decoder.map(Into::into),
    };
    log::info!("evaluating {} items with {} workers", manifest.item_count(), opts.workers);
    let outcome = pipeline::evaluate(&manifest, &opts).map_err(pipeline_failure)?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    for f in &outcome.failures {
        log::error!("{f}");
    }
    let degenerate = outcome.report.degenerate_metrics();
    if !degenerate.is_empty() {
        log::error!("degenerate metrics under policy error: {}", degenerate.join(", "));
    }
    let format = match args.format {
        Format::Json => ReportFormat::Json,
        Format::Table => ReportFormat::Table,
    };
    write_output(args.out.as_deref(), &render_report(&outcome.report, format)).map_err(|e| Failure {
        code: EXIT_ITEM_FAILURE,
        error: e,
    })?;
    Ok(if outcome.is_clean() { 0 } else { EXIT_ITEM_FAILURE })
}

fn summarize(args: SummarizeArgs) -> Result<u8, Failure> {
    let mut reports = Vec::with_capacity(args.reports.len());
    for path in &args.reports {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(config)?;
        let report = parse_report(&text)
            .with_context(|| format!("{} is not a report", path.display()))
            .map_err(config)?;
        let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        reports.push((label, report));
    }
    let table = render_comparison(&reports).map_err(config)?;
    write_output(args.out.as_deref(), &table).map_err(config)?;
    Ok(0)
}

fn range(name: &str, v: &[f64]) -> anyhow::Result<(f64, f64)> {
    match v {
        [lo, hi] => Ok((*lo, *hi)),
        _ => bail!("{name} takes exactly two values lo,hi"),
    }
}

fn synth(args: SynthArgs) -> Result<u8, Failure> {
    let subsets = if args.subsets.is_empty() {
        Subset::ALL.to_vec()
    } else {
        args.subsets
            .iter()
            .map(|k| Subset::from_key(k).ok_or_else(|| anyhow!("unknown subset {k:?}")))
            .collect::<anyhow::Result<Vec<_>>>()
            .map_err(config)?
    };
    let confidence = match args.profile {
        Profile::Calibrated => ConfidenceProfile::Calibrated,
        Profile::Constant => ConfidenceProfile::Constant(args.confidence),
        Profile::Uniform => {
            let (lo, hi) = range("--confidence-range", &args.confidence_range).map_err(config)?;
            ConfidenceProfile::Uniform { lo, hi }
        }
    };
    let invalid_confidence = args
        .invalid_confidence
        .as_deref()
        .map(|v| range("--invalid-confidence", v))
        .transpose()
        .map_err(config)?;
    let spec = FixtureSpec {
        class_count: args.classes,
        height: args.height,
        width: args.width,
        subsets,
        images_per_subset: args.images_per_subset,
        error_rate: args.error_rate,
        confidence,
        invalid_fraction: args.invalid_fraction,
        invalid_confidence,
        ignore_fraction: args.ignore_fraction,
    };
    spec.validate().map_err(config)?;
    let path = synth_to_disk(&spec, args.seed, &args.out).map_err(|e| Failure {
        code: EXIT_ITEM_FAILURE,
        error: e.into(),
    })?;
    log::info!(
        "wrote {} images, manifest {}",
        spec.subsets.len() * spec.images_per_subset,
        path.display()
    );
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BRAVO_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::Summarize(a) => summarize(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            log::error!("{error:#}");
            ExitCode::from(code)
        }
    }
}
