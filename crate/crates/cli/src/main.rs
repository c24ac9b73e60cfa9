//! `hoconv` experiment CLI: texture dataset generation, training, evaluation,
//! tied-weight PCA, representational similarity, perturbation sweeps, and
//! FLOP accounting. Every command is deterministic given its config and
//! seeds; reruns produce byte-identical outputs.

use clap::{Parser, Subcommand};
use hoconv_cli::cmds;
use hoconv_cli::config::{load_config, CliError, CliResult, Overrides};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "hoconv",
    version,
    about = "Higher-order convolution texture experiments"
)]
struct Cli {
    /// JSON config file; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory override
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seed list override
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker thread count (default: HOCONV_THREADS or all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the texture classification dataset (HOTX files + manifest)
    Gen,
    /// Train one model kind over a list of seeds
    Train,
    /// Evaluate a checkpoint: accuracy and confusion matrix
    Eval,
    /// Explained-variance PCA over random initializations on a fixed image
    PcaTied,
    /// Representational dissimilarity analysis over trained checkpoints
    Rsa,
    /// Accuracy under texture perturbations of increasing intensity
    Perturb,
    /// Analytic FLOP and parameter accounting for a layer configuration
    Flops,
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("HOCONV_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let overrides = Overrides {
        out: cli.out,
        seeds: cli.seeds,
    };
    let path = cli.config.as_deref();
    match cli.command {
        Command::Gen => {
            let (cfg, hash) = load_config(path, &overrides)?;
            cmds::cmd_gen(&cfg, &hash)
        }
        Command::Train => {
            let (cfg, hash) = load_config(path, &overrides)?;
            cmds::cmd_train(&cfg, &hash)
        }
        Command::Eval => {
            let (cfg, hash) = load_config(path, &overrides)?;
            cmds::cmd_eval(&cfg, &hash)
        }
        Command::PcaTied => {
            let (cfg, hash) = load_config(path, &overrides)?;
            cmds::cmd_pca_tied(&cfg, &hash)
        }
        Command::Rsa => {
            let (cfg, hash) = load_config(path, &overrides)?;
            cmds::cmd_rsa(&cfg, &hash)
        }
        Command::Perturb => {
            let (cfg, hash) = load_config(path, &overrides)?;
            cmds::cmd_perturb(&cfg, &hash)
        }
        Command::Flops => {
            let (cfg, hash) = load_config(path, &overrides)?;
            cmds::cmd_flops(&cfg, &hash)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}
