//! `replicator-ctl`: simulate, verify and sweep subsidy-controlled replicator
//! dynamics from JSON scenario files, writing CSV/JSON for external plotting.
//!
//! Exit codes: 0 success, 1 input error, 2 numeric failure, 3 stability
//! condition inapplicable, 4 agent-simulation assumption violated.

mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "replicator-ctl",
    version,
    about = "Replicator dynamics under output-feedback subsidies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate trajectories from explicit initial states.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        states: States,
    },
    /// Integrate a batch of trajectories (phase portrait) with an index file.
    Portrait {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        states: States,
    },
    /// Check the stability condition for the policy's target and recommend a subsidy.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Tabulate how many initial states reach the target for several subsidies.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        states: States,
        /// Comma-separated subsidy levels.
        #[arg(long, value_delimiter = ',')]
        d_values: Vec<f64>,
        /// Max-norm distance to the target counted as converged.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Run the finite-population simulation and compare it with the ODE.
    Agents {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        states: States,
        /// Total number of agents (at least 100).
        #[arg(long)]
        n_agents: Option<usize>,
        /// Number of synchronous revision rounds.
        #[arg(long)]
        rounds: Option<usize>,
        /// Per-round revision probability.
        #[arg(long)]
        rate: Option<f64>,
        /// Pay each agent from one random match instead of expected payoffs.
        #[arg(long)]
        sampled_match: bool,
    },
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Policy JSON file `{ "d": .., "y_star": [..] }`; omit (or d = 0) for no subsidy.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for sampling and agent simulation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replay a manifest written by an earlier run.
    #[arg(long, conflicts_with_all = ["scenario", "policy"])]
    pub manifest: Option<PathBuf>,
    /// RK4 step size.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Integration horizon.
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Record every k-th integration step.
    #[arg(long)]
    pub record_stride: Option<usize>,
    /// Integrate to t_max even after convergence.
    #[arg(long)]
    pub no_early_stop: bool,
}

#[derive(Args, Clone, Default)]
pub struct States {
    /// Initial state: m action-1 shares (two actions) or all m·n shares,
    /// comma-separated. Repeatable.
    #[arg(long = "x0", allow_hyphen_values = true)]
    pub x0: Vec<String>,
    /// Interior grid with N points per population edge.
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Args, Clone, Default)]
pub struct Sampling {
    /// Grid points per simplex edge in the sup search.
    #[arg(long)]
    pub grid_per_dim: Option<usize>,
    /// Uniform random samples in the sup search.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Projected-ascent iterations from the best candidates.
    #[arg(long)]
    pub ascent_iters: Option<usize>,
    /// Samples used to check F1 ≥ 0 on the target-output set.
    #[arg(long)]
    pub xbar_samples: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let request = match cli.command {
        Command::Simulate { common, states } => commands::Request::Simulate { common, states },
        Command::Portrait { common, states } => commands::Request::Portrait { common, states },
        Command::Verify { common, sampling } => commands::Request::Verify { common, sampling },
        Command::Sweep {
            common,
            states,
            d_values,
            tolerance,
        } => commands::Request::Sweep {
            common,
            states,
            d_values,
            tolerance,
        },
        Command::Agents {
            common,
            states,
            n_agents,
            rounds,
            rate,
            sampled_match,
        } => commands::Request::Agents {
            common,
            states,
            n_agents,
            rounds,
            rate,
            sampled_match,
        },
    };
    match commands::execute(request) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
