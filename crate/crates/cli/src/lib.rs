//! `qe`: synthesis, training, compression, evaluation, profiling and sweeps.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
mod config;
mod report;
mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qe_core::model::HeadMode;
use qe_core::tensor::Precision;
use qe_core::QeError;

/// Environment variable holding the number of parallel sweep workers.
pub const WORKERS_ENV: &str = "QE_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "qe", version, about = "Compact quality-estimation models: train, compress, evaluate, profile")]
pub struct Cli {
    /// More logging (-v: progress, -vv: debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus as train/dev/test TSV files.
    Synth(SynthArgs),
    /// Train one model per seed.
    Train(ExperimentArgs),
    /// Compress a trained checkpoint with each requested plan.
    Compress {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        plans: PlanArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a checkpoint on a test file.
    Eval(EvalArgs),
    /// Profile per-component latency at batch size 1.
    Bench(BenchArgs),
    /// Baseline and compressed models for every plan and seed.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        plans: PlanArgs,
        /// Keep a checkpoint for every trained model.
        #[arg(long)]
        save_checkpoints: bool,
        #[arg(long, hide = true)]
        worker: bool,
    },
    /// Aggregate emitted run directories into tables.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the text to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multilingual versus bilingual models under compression.
    Regimes {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        plans: PlanArgs,
    },
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value = "data")]
    pub out_dir: PathBuf,
    /// JSON synthesis spec; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub languages: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_dev: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

/// Experiment config plus the overrides every training command accepts.
#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub mode: Option<HeadMode>,
    /// Label threshold of classification training.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Evaluation thresholds.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Technique {
    LayerPrune,
    TokenPrune,
    ModuleReplace,
}

/// Compression plans; without any of these the config's `plans` are used.
#[derive(Args, Debug, Clone, Default)]
pub struct PlanArgs {
    #[arg(long)]
    pub technique: Option<Technique>,
    /// Layers to drop (layer-prune).
    #[arg(long, value_delimiter = ',')]
    pub drops: Option<Vec<usize>>,
    /// Mask penalty weights (token-prune).
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Top layers replaced by one (module-replace).
    #[arg(long, value_delimiter = ',')]
    pub replace: Option<Vec<usize>>,
    /// The technique's standard levels, scaled to the model depth.
    #[arg(long)]
    pub preset: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "51,70")]
    pub thresholds: Vec<f64>,
    /// Refuse checkpoints of the other head mode.
    #[arg(long)]
    pub mode: Option<HeadMode>,
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Language tag for files without a `lang_pair` column.
    #[arg(long, default_value = "xx-xx")]
    pub lang: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-pair gold/prediction CSV at the first threshold.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = qe_core::benchmark::DEFAULT_WARMUP)]
    pub warmup: usize,
    #[arg(long, default_value_t = qe_core::benchmark::DEFAULT_REPS)]
    pub reps: usize,
    /// Test pairs profiled per repetition.
    #[arg(long, default_value_t = 32)]
    pub n_pairs: usize,
    #[arg(long, default_value = "xx-xx")]
    pub lang: String,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn exit_code(err: &QeError) -> i32 {
    match err {
        QeError::Usage(_) | QeError::Config(_) | QeError::ModeMismatch { .. } => 1,
        QeError::Numeric(_) | QeError::UndefinedCorrelation(_) | QeError::Shape { .. } => 3,
        _ => 2,
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .try_init();
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
