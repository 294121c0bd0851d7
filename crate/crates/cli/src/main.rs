use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod cache;
mod commands;
mod config;
mod error;

#[derive(Parser)]
#[command(
    name = "matmodal",
    version,
    about = "Multimodal crystal embedding pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create, import or split datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Simulate XRD patterns, composition features and graphs into the cache.
    Precompute(PrecomputeArgs),
    /// Train a model from a run config.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Evaluate a checkpoint on one split and write an EvalReport.
    Eval(EvalArgs),
    /// Export embeddings of a dataset as JSONL.
    Embed(EmbedArgs),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a directory of P1 CIF files.
    ImportCif {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write train/val/test index files `<prefix>.{train,val,test}.json`.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_prefix: PathBuf,
        /// Train, validation and test fractions.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.6, 0.2, 0.2])]
        ratios: Vec<f64>,
    },
}

#[derive(Args)]
struct PrecomputeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Cache directory; defaults to $MATMODAL_CACHE_DIR, then the config, then ./matmodal-cache.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoint, loss history and effective config.
    #[arg(long)]
    out: PathBuf,
    /// Feature cache; same defaults as `precompute --out`.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Contrastive pre-training of two encoders.
    Align(TrainArgs),
    /// Task training, optionally from an aligned checkpoint.
    Downstream(TrainArgs),
    /// Joint task and contrastive training with a fused embedding.
    AlignFuse(TrainArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    /// Run config; defaults to run_config.json next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset JSONL.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Add a 3-component PCA projection to every line.
    #[arg(long)]
    pca3: bool,
    /// Encoder to read for aligned pairs; defaults to the first.
    #[arg(long)]
    modality: Option<String>,
}

fn run(cli: Cli) -> error::Result<()> {
    match cli.command {
        Command::Dataset(DatasetCommand::Synth { n, seed, out }) => commands::synth(n, seed, &out),
        Command::Dataset(DatasetCommand::ImportCif { dir, out }) => {
            commands::import_cif(&dir, &out)
        }
        Command::Dataset(DatasetCommand::Split {
            input,
            seed,
            out_prefix,
            ratios,
        }) => commands::split(&input, seed, &out_prefix, &ratios),
        Command::Precompute(a) => {
            commands::precompute(&a.input, a.out.as_deref(), a.config.as_deref())
        }
        Command::Train(t) => {
            let (kind, a) = match t {
                TrainCommand::Align(a) => (commands::TrainKind::Align, a),
                TrainCommand::Downstream(a) => (commands::TrainKind::Downstream, a),
                TrainCommand::AlignFuse(a) => (commands::TrainKind::AlignFuse, a),
            };
            commands::train(kind, &a.config, &a.out, a.cache.as_deref())
        }
        Command::Eval(a) => commands::eval(
            &a.checkpoint,
            &a.split,
            &a.out,
            a.config.as_deref(),
            a.cache.as_deref(),
        ),
        Command::Embed(a) => commands::embed(
            &a.checkpoint,
            &a.input,
            &a.out,
            a.pca3,
            a.modality.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
