mod commands;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "psl", version, about = "Pseudo strong label experiments on synthetic audio")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply to anything left out.
    #[arg(long, global = true, env = "PSL_CONFIG")]
    pub config: Option<PathBuf>,

    /// Overrides `seed` from the config.
    #[arg(long, global = true, env = "PSL_SEED")]
    pub seed: Option<u64>,

    /// Threads for data-parallel sections. Output does not depend on it.
    #[arg(long, global = true, env = "PSL_WORKERS")]
    pub workers: Option<usize>,

    /// Overrides `paths.run_dir` from the config.
    #[arg(long, global = true, env = "PSL_RUN_DIR")]
    pub run_dir: Option<PathBuf>,

    /// Replace artifacts that were produced by a different configuration.
    #[arg(long, global = true, env = "PSL_FORCE")]
    pub force: bool,

    /// Print what would be done and write nothing.
    #[arg(long, global = true, env = "PSL_DRY_RUN")]
    pub dry_run: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the corpus, corrupt its labels and write the manifest.
    Gen,
    /// Train the machine annotator on the weak labels.
    TrainAnnotator,
    /// Write soft labels for every training clip.
    Relabel {
        /// Segment length in seconds; defaults to every `psl.resolutions` entry.
        #[arg(long)]
        resolution: Option<f64>,
    },
    /// Train one student (or the weak baseline).
    TrainStudent {
        #[arg(long, required_unless_present = "weak")]
        resolution: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Train the weak baseline at full clip length instead.
        #[arg(long, conflicts_with_all = ["resolution", "alpha"])]
        weak: bool,
    },
    /// Score the eval split against its original labels.
    Eval {
        #[arg(long, required_unless_present = "scores", conflicts_with = "scores")]
        checkpoint: Option<PathBuf>,
        /// JSONL rows of `{"clip_id": .., "scores": [..]}` covering the eval split.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Segment length the checkpoint was trained at; defaults to the clip length.
        #[arg(long)]
        resolution: Option<f64>,
    },
    /// Label-count histograms, coverage and dropped-label recovery of a soft-label store.
    Analyze {
        #[arg(long)]
        resolution: Option<f64>,
    },
    /// Train a fresh head on the second corpus over a frozen backbone.
    Transfer {
        #[arg(long)]
        source: PathBuf,
        /// Segment length for the target corpus; defaults to the clip length.
        #[arg(long)]
        resolution: Option<f64>,
    },
    /// Run every (method, alpha, resolution, seed) cell and write results.csv.
    Matrix,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PSL_LOG", "info").write_style("PSL_LOG_STYLE"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}
