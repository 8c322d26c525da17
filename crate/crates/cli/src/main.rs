//! `gaitkit`: synthesize, train, embed, re-rank and evaluate from the shell.
//!
//! Commands talk to each other only through files. Exit status is 0 on
//! success, 2 for bad flags or configuration and 1 for runtime failures.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gaitkit::GaitError;

use crate::config::RunConfig;

/// Error caused by the invocation rather than the data; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "gaitkit",
    version,
    about = "Silhouette gait recognition with global distance alignment"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads; 1 makes every output bitwise reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for data synthesis, initialization and batch sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic silhouette dataset with its protocol.
    Synth(SynthArgs),
    /// Train the embedding network with batch-hard triplet loss.
    Train(TrainArgs),
    /// Embed one split of a dataset into a GEMB file.
    Embed(EmbedArgs),
    /// Refine a probe x gallery distance matrix with an adjustment set.
    Rerank(RerankArgs),
    /// Cross-view rank-1 evaluation, optionally with and without GDA.
    Eval(EvalArgs),
    /// Run the gradient and oracle self-tests.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub train_subjects: Option<usize>,
    #[arg(long)]
    pub test_subjects: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Comma-separated camera angles in degrees.
    #[arg(long, value_delimiter = ',')]
    pub views: Option<Vec<u32>>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset root (subject/condition-seq/view/frames).
    #[arg(long)]
    pub data: PathBuf,
    /// Protocol preset (casia-b, mini-oumvlp, mini-oumvlp-cross) or JSON
    /// file; defaults to `<data>/protocol.json`.
    #[arg(long)]
    pub protocol: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory for checkpoints, the loss CSV and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Subjects per batch.
    #[arg(long)]
    pub p: Option<usize>,
    /// Sequences per subject.
    #[arg(long)]
    pub k: Option<usize>,
    /// Frames sampled per sequence.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// FFE block counts, one per stacked layer (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub blocks: Option<Vec<usize>>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Continue from a checkpoint (its architecture wins over the config).
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// train, gallery, probe:<name>, probes, test or unlabeled.
    #[arg(long)]
    pub split: String,
    /// Output GEMB file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a CSV next to the GEMB file.
    #[arg(long)]
    pub csv: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    ProbeOnly,
    ProbeAndGallery,
}

#[derive(Args, Debug, Default)]
pub struct GdaArgs {
    /// Similar-set exponent: kappa = max(k_min, ceil(n / 10^t)).
    #[arg(long)]
    pub t: Option<u32>,
    #[arg(long)]
    pub lambda_g: Option<f64>,
    #[arg(long)]
    pub lambda_q: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub k_min: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RerankArgs {
    #[arg(long, value_name = "GEMB")]
    pub probes: PathBuf,
    #[arg(long, value_name = "GEMB")]
    pub gallery: PathBuf,
    #[arg(long, value_name = "GEMB")]
    pub adjustment: PathBuf,
    /// Output GDST file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the long-form CSV.
    #[arg(long)]
    pub csv: bool,
    /// Also write one matrix per adjustment-subject count.
    #[arg(long, value_delimiter = ',', value_name = "COUNTS")]
    pub sweep_adjustment_subjects: Option<Vec<usize>>,
    #[command(flatten)]
    pub gda: GdaArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Evaluate a precomputed GDST matrix.
    #[arg(long, value_name = "GDST", conflicts_with_all = ["probes", "gallery"])]
    pub matrix: Option<PathBuf>,
    #[arg(long, value_name = "GEMB", requires = "gallery")]
    pub probes: Option<PathBuf>,
    #[arg(long, value_name = "GEMB", requires = "probes")]
    pub gallery: Option<PathBuf>,
    #[arg(long, value_name = "GEMB")]
    pub adjustment: Option<PathBuf>,
    /// Report both unrefined and GDA-refined results.
    #[arg(long, overrides_with = "no_gda")]
    pub gda: bool,
    /// Report unrefined results only (default).
    #[arg(long)]
    pub no_gda: bool,
    /// Protocol preset or JSON file.
    #[arg(long)]
    pub protocol: Option<String>,
    /// Dataset root whose protocol.json to use.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write sweep.csv with rank-1 per adjustment-subject count.
    #[arg(long, value_delimiter = ',', value_name = "COUNTS")]
    pub sweep_adjustment_subjects: Option<Vec<usize>>,
    #[command(flatten)]
    pub gda_cfg: GdaArgs,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Random instances per check.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cfg.resolve_seed(cli.seed)?;
    if let Some(n) = cli.threads.or(cfg.threads) {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
        cfg.threads = Some(n);
    }
    match cli.command {
        Command::Synth(a) => commands::synth(a, cfg, seed),
        Command::Train(a) => commands::train(a, cfg, seed),
        Command::Embed(a) => commands::embed(a, cfg, seed),
        Command::Rerank(a) => commands::rerank(a, cfg, seed),
        Command::Eval(a) => commands::eval(a, cfg, seed),
        Command::Check(a) => commands::check(a, seed),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<GaitError>() {
        Some(GaitError::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
