//! Command-line front end: configuration, sequence I/O, and one subcommand
//! per pipeline stage. Every command is deterministic given its inputs,
//! config, and seed; nothing here timestamps its outputs.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use photodepth::optimizer::OptimizerError;

pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;

/// Failures sorted by exit code: 1 for a failed check, 2 for bad input, 3 for
/// a numerical abort inside the optimizer.
#[derive(Debug)]
pub enum CliError {
    Check(String),
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Check(m) | CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "photodepth", version, about = "Self-supervised depth toolkit")]
pub struct Cli {
    /// TOML configuration; omitted sections fall back to defaults.
    #[arg(long, global = true, env = "PHOTODEPTH_CONFIG")]
    pub config: Option<PathBuf>,

    /// Overrides every per-section seed in the config.
    #[arg(long, global = true, env = "PHOTODEPTH_SEED")]
    pub seed: Option<u64>,

    /// Output directory, created if missing.
    #[arg(long, global = true, env = "PHOTODEPTH_OUT", default_value = "photodepth_out")]
    pub out: PathBuf,

    /// Worker threads for per-image fan-out; defaults to the core count.
    #[arg(long, global = true, env = "PHOTODEPTH_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Warp each support frame into the target view under a saved state.
    Synthesize {
        #[arg(long)]
        manifest: PathBuf,
        /// Optimizer state JSON holding depth, poses, and intrinsics.
        #[arg(long)]
        state: PathBuf,
    },
    /// Fit depth, poses, and optionally intrinsics to a sequence.
    Optimize {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score prediction directories against ground-truth depth maps.
    Eval {
        /// Prediction directory; repeat for a multi-method comparison.
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        gt: PathBuf,
        /// Camera for the point-cloud metric; defaults to intrinsics.json
        /// next to the ground truth when present.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
    },
    /// Apply the augmentation policy to a sequence as one consistent tuple.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Validate analytic gradients against finite differences.
    Gradcheck,
    /// Render a synthetic scene with exact ground truth.
    MakeScene,
}

/// Run a parsed invocation, mapping errors to their exit codes.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut app_config = config::load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config::apply_seed(&mut app_config, seed);
    }
    io::create_out_dir(&cli.out)?;
    let jobs = cli.jobs.unwrap_or(0);

    match cli.command {
        Command::Synthesize { manifest, state } => {
            commands::synthesize::run(&manifest, &state, &app_config, &cli.out)
        }
        Command::Optimize { manifest } => {
            commands::optimize::run(&manifest, &app_config, &cli.out)
        }
        Command::Eval {
            pred,
            gt,
            intrinsics,
        } => commands::eval::run(&pred, &gt, intrinsics.as_deref(), &app_config, &cli.out, jobs),
        Command::Augment { manifest } => {
            commands::augment::run(&manifest, &app_config, &cli.out, jobs)
        }
        Command::Gradcheck => commands::gradcheck::run(&app_config, &cli.out),
        Command::MakeScene => commands::make_scene::run(&app_config, &cli.out),
    }
}
