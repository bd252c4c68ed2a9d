use std::path::PathBuf;
use std::process::ExitCode;

use bookrec::cli::{self, CliError, Outputs, Overrides, RunConfig};
use clap::{Parser, Subcommand};

/// Book recommendation pipeline: ingest, train, evaluate and report.
#[derive(Debug, Parser)]
#[command(name = "bookrec", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the split, the models and the generator.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated cut-offs, e.g. `1,5,10,20`.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Train on library loans only.
    #[arg(long, global = true)]
    bct_only: bool,
    /// EMBV1 embedding file for Closest Items.
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    /// Use hashed embeddings of this dimension when no file is given.
    #[arg(long, global = true, value_name = "DIM")]
    fallback_embed: Option<usize>,
    /// Also write timing.csv (wall-clock, not reproducible).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge the source tables into catalog.csv, genres.csv and readings.csv.
    Ingest,
    /// Write reading-count CDFs and the genre distribution.
    Characterize,
    /// Fit BPR on the training split and save model.bprv1.
    Train,
    /// Evaluate every recommender at the report cut-off.
    Evaluate,
    /// Grid search over BPR factors and learning rates.
    Grid,
    /// Evaluate every recommender across the k list.
    Sweep,
    /// Closest Items per metadata field set.
    Ablation,
    /// Generate synthetic source tables.
    Synth,
    /// Answer `recommend <user> <k>` requests on standard input.
    Serve,
}

fn run(args: Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: args.seed,
        k: args.k,
        bct_only: args.bct_only,
        embeddings: args.embeddings,
        fallback_embed: args.fallback_embed,
    });
    cfg.timing |= args.timing;
    cfg.validate()?;
    let outputs: Outputs = match args.command {
        Command::Ingest => {
            let (out, status) = cli::cmd_ingest(&cfg)?;
            out.commit()?;
            return status;
        }
        Command::Characterize => cli::cmd_characterize(&cfg)?,
        Command::Train => cli::cmd_train(&cfg)?,
        Command::Evaluate => cli::cmd_evaluate(&cfg)?,
        Command::Grid => cli::cmd_grid(&cfg)?,
        Command::Sweep => cli::cmd_sweep(&cfg)?,
        Command::Ablation => cli::cmd_ablation(&cfg)?,
        Command::Synth => cli::cmd_synth(&cfg)?,
        Command::Serve => {
            let stdin = std::io::stdin();
            return cli::cmd_serve(&cfg, stdin.lock(), std::io::stdout().lock());
        }
    };
    outputs.commit()?;
    for (path, _) in &outputs.files {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.stage());
            ExitCode::FAILURE
        }
    }
}
