//! `nwdkit` command-line tool.

mod commands;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "nwdkit",
    version,
    about = "Box similarity curves, anchor assignment statistics and scale-stratified evaluation for tiny objects"
)]
struct Cli {
    /// Plain-text `key = value` file of flag values; flags on the command line take precedence
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Log more (repeat for debug output)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Metric value against center deviation for a pair of square boxes; one CSV per (metric, scale)
    Curve(CurveArgs),
    /// Positive anchors per gt by scale bucket and label totals for one assigner
    AssignStats(AssignStatsArgs),
    /// COCO-style AP/AR with very-tiny/tiny/small/medium strata
    Evaluate(EvaluateArgs),
    /// Instance counts, absolute-size statistics and scale-bucket shares per annotation file
    DatasetStats(DatasetStatsArgs),
    /// Repeat assign-stats over values of one assignment parameter.
    ///
    /// Writes one assign-stats report per value and a summary.csv. This is a
    /// sweep over assignment statistics (positives per gt, label totals); it
    /// does not train or evaluate a detector and reports no AP.
    Sweep(SweepArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MetricName {
    Iou,
    Giou,
    Diou,
    Ciou,
    Gwd,
    Nwd,
}

impl MetricName {
    fn as_str(self) -> &'static str {
        match self {
            MetricName::Iou => "iou",
            MetricName::Giou => "giou",
            MetricName::Diou => "diou",
            MetricName::Ciou => "ciou",
            MetricName::Gwd => "gwd",
            MetricName::Nwd => "nwd",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum StrategyName {
    Rka,
    Threshold,
}

#[derive(Args, Debug)]
struct CurveArgs {
    /// Metric to sample (repeatable or comma-separated)
    #[arg(long = "metric", value_enum, value_delimiter = ',', default_values_t = [MetricName::Iou, MetricName::Nwd])]
    metrics: Vec<MetricName>,

    /// Side length of box A in pixels (repeatable or comma-separated)
    #[arg(long = "scale", value_delimiter = ',', required = true)]
    scales: Vec<f64>,

    /// Side of box B as a multiple of the side of box A
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,

    /// Largest diagonal deviation in pixels
    #[arg(long, default_value_t = 30)]
    max_dev: u32,

    /// NWD normalization constant in pixels
    #[arg(long = "C", default_value_t = 12.7)]
    c: f64,

    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct AssignOpts {
    /// COCO annotation file to assign over
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    ann: Option<PathBuf>,

    /// Synthetic single-image scene, e.g. `vt=25,t=25,s=25,m=25` (needs --seed)
    #[arg(long, requires = "seed")]
    synth: Option<String>,

    /// Side of the synthetic image in pixels
    #[arg(long, default_value_t = 512)]
    image_size: u32,

    /// Seed for the synthetic scene
    #[arg(long)]
    seed: Option<u64>,

    /// Assigner
    #[arg(long, value_enum, default_value_t = StrategyName::Rka)]
    strategy: StrategyName,

    /// Assignment metric [default: nwd for rka, iou for threshold]
    #[arg(long, value_enum)]
    metric: Option<MetricName>,

    /// Positives per gt for rka
    #[arg(long, default_value_t = 2)]
    k: usize,

    /// NWD normalization constant in pixels
    #[arg(long = "C", default_value_t = 12.7)]
    c: f64,

    /// Positive threshold for the threshold assigner
    #[arg(long, default_value_t = 0.7)]
    theta_p: f64,

    /// Negative threshold for the threshold assigner
    #[arg(long, default_value_t = 0.3)]
    theta_n: f64,

    /// Smallest best-anchor score that still forces a positive (threshold assigner)
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    min_pos_metric: f64,

    /// Feature strides, strictly increasing
    #[arg(long, value_delimiter = ',', default_values_t = [4.0, 8.0, 16.0, 32.0, 64.0])]
    strides: Vec<f64>,

    /// Anchor side in units of the stride
    #[arg(long, default_value_t = 8.0)]
    anchor_scale: f64,

    /// Anchor aspect ratios w/h
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0])]
    ratios: Vec<f64>,

    /// Clip anchors to the image
    #[arg(long)]
    clip_border: bool,
}

#[derive(Args, Debug)]
struct AssignStatsArgs {
    #[command(flatten)]
    opts: AssignOpts,

    /// JSON report path [default: standard output]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// COCO annotation file
    #[arg(long)]
    ann: PathBuf,

    /// COCO detection results file
    #[arg(long)]
    dets: PathBuf,

    /// Detections kept per image and category, highest score first
    #[arg(long, default_value_t = 1500)]
    max_det: usize,

    /// JSON report path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DatasetStatsArgs {
    /// Annotation file, one per split (repeatable)
    #[arg(long = "ann", required = true)]
    anns: Vec<PathBuf>,

    /// JSON report path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    #[value(name = "C")]
    C,
    #[value(name = "k")]
    K,
    #[value(name = "anchor-scale")]
    AnchorScale,
}

impl SweepParam {
    fn as_str(self) -> &'static str {
        match self {
            SweepParam::C => "C",
            SweepParam::K => "k",
            SweepParam::AnchorScale => "anchor-scale",
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Parameter to vary
    #[arg(long, value_enum)]
    param: SweepParam,

    /// Values to try (comma-separated)
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,

    #[command(flatten)]
    opts: AssignOpts,

    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// A bad flag value caught after parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(
                e.downcast_ref::<nwdkit::Error>(),
                Some(nwdkit::Error::InvalidParameter(_) | nwdkit::Error::InvalidConfig(_))
            )
    })
}

/// The error chain, skipping causes whose text the message already carries.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.is_empty() {
            msg = text;
        } else if !msg.contains(&text) {
            msg = format!("{msg}: {text}");
        }
    }
    msg
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Curve(a) => commands::curve(&a),
        Command::AssignStats(a) => commands::assign_stats(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::DatasetStats(a) => commands::dataset_stats(&a),
        Command::Sweep(a) => commands::sweep(&a),
    }
}

fn main() -> ExitCode {
    let mut argv: Vec<OsString> = std::env::args_os().collect();
    if let Some(path) = config::path_from_args(&argv) {
        let merged = config::read(path.as_ref())
            .and_then(|entries| Ok(config::merge(Cli::command(), argv, entries)?));
        argv = match merged {
            Ok(a) => a,
            Err(e) => {
                eprintln!("error: {}", describe(&e));
                return ExitCode::from(if is_usage(&e) { 2 } else { 1 });
            }
        };
    }
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}
