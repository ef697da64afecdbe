//! `vidalign`: synthetic data, matching, alignment, keypoint transfer,
//! PCK evaluation and text grounding from the command line.
//!
//! Exit status: 0 on success, 1 for usage or input errors, 2 when an
//! internal invariant fails.

mod commands;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "vidalign",
    version,
    about = "Align per-video reconstructions and transfer what they share"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Dataset manifest (TOML).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Video to register every other video of its group to.
    #[arg(long, global = true)]
    pub reference: Option<String>,
    /// Seed overriding the configuration's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write JSON-lines logs here instead of stderr.
    #[arg(long, global = true)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Graph,
    Direct,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted ground truth.
    Synth,
    /// Retrieve, match and flow-filter frame pairs across videos.
    Match,
    /// Build the alignment graph and register every group.
    Align,
    /// Transfer triangulated keypoints to other videos.
    Transfer {
        /// Only transfer from this video.
        #[arg(long)]
        source: Option<String>,
        #[arg(long, value_enum, default_value = "graph")]
        mode: Mode,
        /// Previously written alignment graph; recomputed when absent.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Score transferred keypoints against annotation ground truth.
    EvalPck {
        /// Directory of `<source>__<target>.kp3` predictions.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Text-to-voxel grounding.
    Ground {
        #[command(subcommand)]
        command: GroundCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum GroundCommand {
    /// Train the shared encoder and per-group heads.
    Train {
        /// Previously written alignment graph; recomputed when absent.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Ground one text query.
    Query {
        /// Trained checkpoint (`.gmod`).
        #[arg(long)]
        model: PathBuf,
        /// Group (car model) whose head to use.
        #[arg(long)]
        group: String,
        /// Query text.
        #[arg(long)]
        text: String,
    },
    /// PCK of held-out queries against the chance baseline.
    Eval {
        /// Trained checkpoint (`.gmod`).
        #[arg(long)]
        model: PathBuf,
        /// Held-out queries (`.gq`).
        #[arg(long)]
        queries: PathBuf,
        /// Metric scales per group; defaults to `scales.toml` next to the model.
        #[arg(long)]
        scales: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    if let Err(e) = logging::init(cli.global.log.as_deref()) {
        eprintln!("error: cannot open log file: {e}");
        return ExitCode::from(1);
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
