use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use saga_core::annotation::Format;
use saga_core::engine::{AugmentationPolicy, Mode};
use saga_core::eval::{map50, DetectionSet};
use saga_core::harness::{run_comparison, HarnessConfig, SourceAugmentation};
use saga_core::pipeline::{load_manifest, run_pipeline, stats, Codec, PipelineConfig};

#[derive(Parser)]
#[command(name = "saga-forge", version, about = "Instance-level gray augmentation for detection datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Augment a dataset and write images, manifest and report.json.
    Augment(AugmentArgs),
    /// Print instance, split and box-area statistics as JSON.
    Stats(StatsArgs),
    /// Score COCO-style results against a ground-truth manifest.
    Eval(EvalArgs),
    /// Run the mean-teacher comparison on synthetic scenes.
    Harness(HarnessArgs),
}

#[derive(clap::Args)]
struct DatasetArgs {
    /// COCO JSON file, YOLO label directory or VOC XML directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "coco")]
    format: Format,
    /// Image root. Defaults to the input's directory.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Class list file for YOLO/VOC (one name per line).
    #[arg(long)]
    classes: Option<PathBuf>,
}

impl DatasetArgs {
    fn images(&self) -> PathBuf {
        self.images.clone().unwrap_or_else(|| {
            if self.input.is_dir() {
                self.input.clone()
            } else {
                self.input.parent().map(Path::to_path_buf).unwrap_or_default()
            }
        })
    }

    fn class_names(&self) -> Result<Option<Vec<String>>> {
        let Some(path) = &self.classes else { return Ok(None) };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(
            text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
        ))
    }
}

#[derive(clap::Args)]
struct AugmentArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "saga")]
    mode: Mode,
    /// Per-instance probability of graying.
    #[arg(long, default_value_t = 1.0)]
    prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// png or jpeg[:quality]
    #[arg(long, default_value = "png")]
    codec: Codec,
    /// Only gray these category ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    categories: Option<Vec<u32>>,
    /// Leave ignore-flagged instances in color.
    #[arg(long)]
    skip_ignored: bool,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Ground-truth manifest.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "coco")]
    format: Format,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    classes: Option<PathBuf>,
    /// COCO results array `[{image_id, category_id, bbox, score}]`.
    #[arg(long)]
    pred: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arms {
    On,
    Off,
    Fullgray,
    All,
}

impl Arms {
    fn augmentations(self) -> Vec<SourceAugmentation> {
        match self {
            Arms::On => vec![SourceAugmentation::Saga],
            Arms::Off => vec![SourceAugmentation::Vanilla],
            Arms::Fullgray => vec![SourceAugmentation::FullGray],
            Arms::All => SourceAugmentation::ALL.to_vec(),
        }
    }
}

#[derive(clap::Args)]
struct HarnessArgs {
    /// Which source augmentation arms to train.
    #[arg(long, value_enum, default_value = "all")]
    saga: Arms,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    burn_in: Option<u64>,
    /// Total iterations, burn-in included.
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    bias: Option<f64>,
    #[arg(long)]
    target_weight: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    /// Directory for harness_report.json and per-run curve CSVs.
    #[arg(long, default_value = "harness_out")]
    out: PathBuf,
}

/// Pretty-prints `value` to stdout. A closed pipe is not an error.
fn emit<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn augment(args: AugmentArgs) -> Result<ExitCode> {
    let mut policy = AugmentationPolicy::new(args.mode, args.seed)
        .with_probability(args.prob)?
        .with_include_ignore(!args.skip_ignored);
    if let Some(ids) = args.categories {
        policy = policy.with_categories(ids);
    }
    let mut config = PipelineConfig::new(
        &args.dataset.input,
        args.dataset.format,
        args.dataset.images(),
        &args.out,
    );
    config.policy = policy;
    config.workers = args.workers;
    config.codec = args.codec;
    config.force = args.force;
    config.class_names = args.dataset.class_names()?;
    let report = run_pipeline(&config)?;
    for entry in report.images.iter().filter(|e| e.error.is_some()) {
        eprintln!("image {} ({}): {}", entry.image_id, entry.source, entry.error.as_deref().unwrap_or_default());
    }
    eprintln!(
        "{} of {} images written, {} failed, {} instances grayed",
        report.processed, report.images_total, report.failed, report.instances_grayed
    );
    Ok(ExitCode::from(report.exit_code() as u8))
}

fn print_stats(args: StatsArgs) -> Result<ExitCode> {
    let names = args.dataset.class_names()?;
    let manifest = load_manifest(
        args.dataset.format,
        &args.dataset.input,
        &args.dataset.images(),
        names.as_deref(),
    )?;
    emit(&stats(&manifest))?;
    Ok(ExitCode::SUCCESS)
}

fn evaluate(args: EvalArgs) -> Result<ExitCode> {
    let dataset = DatasetArgs {
        input: args.gt,
        format: args.format,
        images: args.images,
        classes: args.classes,
    };
    let names = dataset.class_names()?;
    let gt = load_manifest(dataset.format, &dataset.input, &dataset.images(), names.as_deref())?;
    let text = fs::read_to_string(&args.pred).with_context(|| format!("reading {}", args.pred.display()))?;
    let predictions = DetectionSet::from_coco_results(&text, &gt)?;
    emit(&map50(&predictions, &gt)?)?;
    Ok(ExitCode::SUCCESS)
}

fn harness(args: HarnessArgs) -> Result<ExitCode> {
    if args.seeds.is_empty() {
        bail!("--seeds needs at least one seed");
    }
    let mut base = HarnessConfig::default();
    if let Some(v) = args.alpha {
        base.alpha = v;
    }
    if let Some(v) = args.burn_in {
        base.burn_in_iters = v;
    }
    if let Some(v) = args.iters {
        base.total_iters = v;
    }
    if let Some(v) = args.threshold {
        base.threshold = v;
    }
    if let Some(v) = args.bias {
        base.bias_strength = v;
    }
    if let Some(v) = args.target_weight {
        base.target_weight = v;
    }
    let (report, runs) = run_comparison(&base, &args.saga.augmentations(), &args.seeds)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for run in &runs {
        let name = format!("curve_{}_seed{}.csv", run.config.augmentation.name(), run.config.seed);
        fs::write(args.out.join(name), run.curve_csv())?;
    }
    let path = args.out.join("harness_report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    for arm in &report.arms {
        eprintln!("{:<9} median teacher mAP50 {:.4}", arm.augmentation.name(), arm.median_map50);
    }
    if let Some(m) = report.verdict.saga_minus_vanilla {
        eprintln!("saga - vanilla  {m:+.4}");
    }
    if let Some(m) = report.verdict.saga_minus_fullgray {
        eprintln!("saga - fullgray {m:+.4}");
    }
    eprintln!("report written to {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Augment(a) => augment(a),
        Command::Stats(a) => print_stats(a),
        Command::Eval(a) => evaluate(a),
        Command::Harness(a) => harness(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}
