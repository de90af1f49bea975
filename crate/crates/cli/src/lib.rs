//! Command-line front end: dataset generation, single runs, batch
//! evaluation, threshold sweeps and the two servers.
//!
//! Exit codes: 0 success, 1 usage, configuration or I/O error, 2 the command
//! ran but its outcome failed (an unsuccessful `explore` episode, or an
//! `eval` configuration with zero successes).

pub mod args;
pub mod commands;
pub mod manifest;
pub mod pgm;

use std::path::Path;

use clap::{Parser, Subcommand};

pub use args::{EpisodeArgs, EvalArgs, ExploreArgs, GenArgs, PlannerArgs, ServeArgs, ServePredictorArgs, SweepArgs};
pub use manifest::{RecordedCommand, RunManifest, RUN_MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(name = "gridscout", version, about = "Grid-world exploration with map prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of floorplans.
    Gen(GenArgs),
    /// Run one episode and export its trace and path image.
    Explore(ExploreArgs),
    /// Run planner and predictor configurations over a dataset.
    Eval(EvalArgs),
    /// Evaluate a grid of threshold confidence levels.
    SweepThresholds(SweepArgs),
    /// Serve environment sessions over TCP or stdio.
    Serve(ServeArgs),
    /// Serve a built-in predictor over the predictor protocol.
    ServePredictor(ServePredictorArgs),
    /// Re-run the command recorded in a run manifest.
    Replay {
        /// Path to a `run.json`.
        #[arg(long)]
        manifest: std::path::PathBuf,
        /// Output directory for the reproduced artifacts.
        #[arg(long)]
        out: std::path::PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

/// How a command that ran to completion turned out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The command ran but its result is a failure; maps to exit code 2.
    Failed(String),
}

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Success => EXIT_SUCCESS,
            Outcome::Failed(_) => EXIT_FAILED,
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Explore(a) => commands::explore(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::SweepThresholds(a) => commands::sweep(&a),
        Command::Serve(a) => commands::serve(&a),
        Command::ServePredictor(a) => commands::serve_predictor(&a),
        Command::Replay { manifest, out, jobs } => replay(&manifest, &out, jobs),
    }
}

/// Re-runs a recorded command into `out`.
pub fn replay(manifest: &Path, out: &Path, jobs: usize) -> anyhow::Result<Outcome> {
    let m = RunManifest::load(manifest)?;
    m.check_version()?;
    match m.command {
        RecordedCommand::Gen(mut a) => {
            a.out = out.to_path_buf();
            a.jobs = jobs;
            commands::gen(&a)
        }
        RecordedCommand::Explore(mut a) => {
            a.out = out.to_path_buf();
            commands::explore(&a)
        }
        RecordedCommand::Eval(mut a) => {
            a.out = out.to_path_buf();
            a.jobs = jobs;
            commands::eval(&a)
        }
        RecordedCommand::SweepThresholds(mut a) => {
            a.out = out.to_path_buf();
            a.jobs = jobs;
            commands::sweep(&a)
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_SUCCESS,
                _ => EXIT_ERROR,
            };
        }
    };
    match run(cli) {
        Ok(Outcome::Success) => EXIT_SUCCESS,
        Ok(Outcome::Failed(why)) => {
            eprintln!("failed: {why}");
            EXIT_FAILED
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
