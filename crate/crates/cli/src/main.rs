use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use efp_core::pairs::PairScheme;
use efp_core::siamese::OptimizerKind;

mod commands;
mod config;
mod errors;

use config::{MeasureChoice, RunConfig};
use errors::{exit_code, EXIT_OK, EXIT_USAGE};

/// Siamese-network audio fingerprints: build a corpus, train, index and search.
#[derive(Debug, Parser)]
#[command(name = "efp", version, about)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Global seed. Falls back to the config file, then EFP_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labelled corpus of WAV files plus manifest.csv.
    Synth(SynthArgs),
    /// Decode every manifest clip and write the log-spectrogram feature cache.
    Featurize(FeaturizeArgs),
    /// Assign train/val/test splits per class, grouped by source file.
    Split(SplitArgs),
    /// Export the train and val pair lists as CSV.
    Pairs(PairsArgs),
    /// Train the twin network and write the model and loss history.
    Train(TrainArgs),
    /// Embed one split with a trained model and write the index.
    Index(IndexArgs),
    /// Rank the index against one clip.
    Query(QueryArgs),
    /// Compute MAP, first-hit precision and the precision-at-K sweep.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// Output directory [default: paths.data_dir]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Feature cache to write [default: paths.features]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Where to write the split manifest [default: overwrite --manifest]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<f64>,
    #[arg(long)]
    pub val: Option<f64>,
    #[arg(long)]
    pub test: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PairingArgs {
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Cap on sampled negatives per anchor clip (unbalanced scheme only).
    #[arg(long)]
    pub max_negatives: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SchemeArg {
    Balanced,
    Unbalanced,
}

impl From<SchemeArg> for PairScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Balanced => PairScheme::Balanced,
            SchemeArg::Unbalanced => PairScheme::Unbalanced,
        }
    }
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub pairing: PairingArgs,
    /// Directory for train_pairs.csv and val_pairs.csv [default: paths.pairs_dir]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub pairing: PairingArgs,
    /// Read train_pairs.csv and val_pairs.csv from here instead of sampling.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// Model file to write [default: paths.model]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss history CSV [default: paths.history]
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Which clips make up the database.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Index file to write [default: paths.index]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum QueryMeasure {
    Euclidean,
    Cosine,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["wav", "clip"])))]
pub struct QueryArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Query with the first full 2 s segment of this file.
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// Query with a clip id from the index or the feature cache.
    #[arg(long)]
    pub clip: Option<String>,
    /// Segment of --wav to use.
    #[arg(long, default_value_t = 0)]
    pub segment: usize,
    /// Feature cache used when --clip is not in the index.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub measure: QueryMeasure,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    /// Leave the query clip itself out of the ranking.
    #[arg(long)]
    pub exclude_self: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub measure: Option<MeasureChoice>,
    /// Largest K in the precision sweep (sweep is 1..=K).
    #[arg(long)]
    pub k_max: Option<usize>,
    /// K reported in the per-class table and the headline metrics.
    #[arg(long)]
    pub headline_k: Option<usize>,
    /// Report directory [default: paths.reports_dir]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cfg.resolve_seed(cli.seed)?;
    let ctx = commands::Context { cfg, seed };
    match cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Featurize(a) => commands::featurize(&ctx, a),
        Command::Split(a) => commands::split(&ctx, a),
        Command::Pairs(a) => commands::pairs(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Index(a) => commands::index(&ctx, a),
        Command::Query(a) => commands::query(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            return ExitCode::from(code as u8);
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
