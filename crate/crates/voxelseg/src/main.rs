use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use voxelseg::cli;
use voxelseg::config::PipelineConfig;
use voxelseg::error::Error;

#[derive(Parser)]
#[command(
    name = "voxelseg",
    about = "Patch-based 3D U-Net segmentation pipeline for volumetric CT",
    version
)]
struct Cli {
    /// Pipeline configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom samples.
    Synth {
        /// Number of samples.
        #[arg(short, long, default_value_t = 10)]
        n: usize,
    },
    /// Preprocess raw samples into the training cache.
    Preprocess {
        /// Input directory (default: paths.raw_dir).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train one model on cached samples.
    Train {
        /// Cache directory (default: paths.cache_dir).
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Cap on training epochs.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Comma-separated training sample ids (default: all).
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<String>>,
        /// Comma-separated validation sample ids.
        #[arg(long, value_delimiter = ',')]
        val_ids: Option<Vec<String>>,
    },
    /// Predict labels for cached samples with a saved checkpoint.
    Predict {
        /// Checkpoint path stem (without .json/.bin).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<String>>,
    },
    /// Score predictions against ground truth.
    Evaluate {
        /// Directory holding predicted samples.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth directory (default: paths.cache_dir).
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Full k-fold cross-validation over the cache.
    Cv {
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

fn thread_pool_from_env() {
    if let Ok(v) = std::env::var("VOXELSEG_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(args: Cli) -> voxelseg::error::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    match args.command {
        Command::Synth { n } => {
            let out = args.out.unwrap_or_else(|| cfg.paths.raw_dir.clone());
            cli::cmd_synth(&cfg, n, &out)?;
        }
        Command::Preprocess { input } => {
            let input = input.unwrap_or_else(|| cfg.paths.raw_dir.clone());
            let out = args.out.unwrap_or_else(|| cfg.paths.cache_dir.clone());
            cli::cmd_preprocess(&cfg, &input, &out)?;
        }
        Command::Train {
            cache,
            max_epochs,
            ids,
            val_ids,
        } => {
            if let Some(m) = max_epochs {
                cfg.train.max_epochs = m;
            }
            let cache = cache.unwrap_or_else(|| cfg.paths.cache_dir.clone());
            let out = args.out.unwrap_or_else(|| cfg.paths.out_dir.join("train"));
            cli::cmd_train(&cfg, &cache, &out, ids.as_deref(), val_ids.as_deref())?;
        }
        Command::Predict {
            checkpoint,
            cache,
            ids,
        } => {
            let cache = cache.unwrap_or_else(|| cfg.paths.cache_dir.clone());
            let out = args.out.unwrap_or_else(|| cfg.paths.out_dir.join("predict"));
            cli::cmd_predict(&cfg, &checkpoint, &cache, ids.as_deref(), &out)?;
        }
        Command::Evaluate { pred, gt } => {
            let gt = gt.unwrap_or_else(|| cfg.paths.cache_dir.clone());
            let out = args.out.unwrap_or_else(|| cfg.paths.out_dir.join("evaluate"));
            cli::cmd_evaluate(&cfg, &pred, &gt, &out)?;
        }
        Command::Cv { k, cache } => {
            let cache = cache.unwrap_or_else(|| cfg.paths.cache_dir.clone());
            let out = args.out.unwrap_or_else(|| cfg.paths.out_dir.join("cv"));
            let report = cli::cmd_cv(&cfg, &cache, k, &out)?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidFoldCount { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    thread_pool_from_env();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
