//! Command-line front end: solve the growth-factor system, tabulate
//! strategies, regenerate figure data, and run Monte Carlo verification.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 solver failure,
//! 4 verification failure, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug)]
pub struct CliError {
    message: String,
    exit_code: u8,
}

impl CliError {
    pub fn config(message: String) -> CliError {
        CliError {
            message,
            exit_code: 2,
        }
    }
    pub fn solver(message: String) -> CliError {
        CliError {
            message,
            exit_code: 3,
        }
    }
    pub fn verification(message: String) -> CliError {
        CliError {
            message,
            exit_code: 4,
        }
    }
    pub fn other(message: String) -> CliError {
        CliError {
            message,
            exit_code: 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "regime-eq",
    version,
    about = "Equilibrium investment fractions for a bull/bear market with regime-dependent risk aversion",
    long_about = "Solves the four coupled growth-factor ODEs behind the time-consistent \
equilibrium strategy of an investor whose CRRA exponent depends on the terminal market \
regime, evaluates the resulting investment fractions, and verifies the solution by Monte \
Carlo simulation of the regime-modulated wealth SDE.\n\n\
Configuration is a flat `key = value` file (see `--config`); every key has a built-in \
default. All outputs are CSV files with headers and full-precision floats. The \
REGIME_EQ_THREADS environment variable caps the Monte Carlo worker count."
)]
struct Cli {
    /// Config file; omitted keys use built-in defaults
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (default: config `output_dir`, else ./out)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the simulation seed
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Override the Monte Carlo path count
    #[arg(long, global = true, value_name = "N")]
    paths: Option<usize>,

    /// Override the Euler step size
    #[arg(long, global = true, value_name = "X")]
    dt: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the growth-factor ODE system and write the trajectory CSV
    Solve,
    /// Tabulate equilibrium and Merton fractions on a uniform time grid
    Strategy {
        /// Number of grid rows
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Reuse a solution CSV written by `solve` instead of re-solving
        #[arg(long, value_name = "PATH")]
        solution: Option<PathBuf>,
    },
    /// Write figure data: 1 = fraction vs time with Merton bounds,
    /// 2/3 = switching-intensity sweeps, 4 = symmetric intensity sweep,
    /// 5 = risk-aversion sweeps. Curve files have columns t,value.
    Figures {
        /// Figure number (1-5)
        #[arg(long, value_name = "K")]
        figure: u8,
    },
    /// Run the Monte Carlo verification suite (nonzero exit on failure)
    Verify,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default_config()?,
    };
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(paths) = cli.paths {
        cfg.sim.n_paths = paths;
    }
    if let Some(dt) = cli.dt {
        cfg.sim.dt = dt;
    }
    cfg.sim
        .validate(cfg.t_horizon)
        .map_err(|e| CliError::config(e.to_string()))?;
    for warning in cfg.coefficient_warnings() {
        eprintln!("warning: {warning}");
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let out_dir = commands::resolve_out_dir(&cfg, cli.out.as_deref());
    match &cli.command {
        Command::Solve => commands::cmd_solve(&cfg, &out_dir),
        Command::Strategy { points, solution } => {
            commands::cmd_strategy(&cfg, &out_dir, *points, solution.as_deref())
        }
        Command::Figures { figure } => commands::cmd_figures(&cfg, &out_dir, *figure),
        Command::Verify => commands::cmd_verify(&cfg, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code)
        }
    }
}
