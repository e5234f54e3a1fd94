//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "skyfed", version, about = "Drone trajectory planning for federated learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Scenario file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Override the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; created when the run succeeds.
    #[arg(long, default_value = "skyfed-out")]
    pub out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    Greedy,
    Horizon,
    Centroid,
    Maxrate,
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Greedy => "greedy",
            Solver::Horizon => "horizon",
            Solver::Centroid => "centroid",
            Solver::Maxrate => "maxrate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Psnr,
    Per,
    Altitude,
    Vmax,
    Kappa,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Psnr => "psnr",
            Axis::Per => "per",
            Axis::Altitude => "altitude",
            Axis::Vmax => "vmax",
            Axis::Kappa => "kappa",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal stationary drone position for the initial device positions.
    Place {
        #[command(flatten)]
        common: Common,
    },
    /// Plan a drone trajectory and report its ATL.
    Trajectory {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Solver::Horizon)]
        solver: Solver,
        /// Return to the start waypoint (horizon solver only).
        #[arg(long)]
        closed_loop: bool,
    },
    /// Simulate federated training along a trajectory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Solver::Horizon)]
        solver: Solver,
        /// Use a trajectory CSV instead of planning one.
        #[arg(long, conflicts_with = "solver")]
        trajectory: Option<PathBuf>,
        /// Delivery draw index.
        #[arg(long, default_value_t = 0)]
        draw: u64,
        /// Mini-batch size for local steps (full batch when absent).
        #[arg(long)]
        batch: Option<usize>,
        /// Skip computing the logistic optimum (the gap column stays empty).
        #[arg(long)]
        no_optimum: bool,
    },
    /// Vary one parameter and report ATL, final loss and rounds to target.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        /// Device whose PSNR or PER is swept (defaults to the last one).
        #[arg(long)]
        device: Option<u32>,
        #[arg(long, value_enum, default_value_t = Solver::Horizon)]
        solver: Solver,
        /// Only compute the ATL.
        #[arg(long)]
        no_train: bool,
    },
}
