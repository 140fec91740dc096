//! `lssf`: train, evaluate, predict and profile the segmentation network.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lssf_core::metrics::Aggregation;
use lssf_core::LssfError;

use run_config::{parse_widths, ConfigError};

#[derive(Parser)]
#[command(name = "lssf", version, about = "Lightweight skin-lesion segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch or from a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset; prints a metrics report as JSON.
    Eval(EvalArgs),
    /// Segment one image and write a {0, 255} PNG mask.
    Predict(PredictArgs),
    /// Per-layer parameter and FLOP table.
    Report(ReportArgs),
    /// Run the built-in gradient, permutation, metrics and structural suites.
    Selftest(SelftestArgs),
    /// Write a synthetic lesion dataset.
    Synth(SynthArgs),
}

/// Overrides applied on top of the JSON document.
#[derive(Args, Clone, Debug, Default)]
pub struct NetworkOverrides {
    /// Square input side.
    #[arg(long)]
    pub size: Option<usize>,
    /// Encoder widths, e.g. `4,8,12,16`.
    #[arg(long, value_parser = parse_widths)]
    pub widths: Option<[usize; 4]>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON run document; every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Warm start from this checkpoint.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Falls back to the config document, then `LSSF_SEED`, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub network: NetworkOverrides,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Turn early stopping off.
    #[arg(long)]
    pub no_early_stop: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AggregationArg {
    PerImage,
    Micro,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::PerImage => Aggregation::PerImage,
            AggregationArg::Micro => Aggregation::Micro,
        }
    }
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "per-image")]
    pub aggregation: AggregationArg,
    /// Also print per-image confusion counts.
    #[arg(long)]
    pub per_image: bool,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out_mask: PathBuf,
    /// Probabilities at or above this value are foreground.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub network: NetworkOverrides,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct SelftestArgs {
    /// Random instances per gradient case.
    #[arg(long, default_value_t = 5)]
    pub instances: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<LssfError>(),
                Some(LssfError::Config(_) | LssfError::ConfigMismatch(_))
            )
    })
}

/// The error chain joined by ": ", skipping causes whose text the previous
/// message already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Report(a) => commands::report(a),
        Command::Selftest(a) => commands::selftest(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
