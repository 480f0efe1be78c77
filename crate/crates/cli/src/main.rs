//! `osc-hawkes`: configuration-driven experiments on two-population
//! oscillatory Hawkes systems.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "osc-hawkes", version, about = "Oscillatory Hawkes systems: simulation, control and rare events")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Key-value or JSON config; missing model keys fall back to the benchmark.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if needed.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Tighten the numerical settings of the subcommand.
    #[arg(long, global = true)]
    pub refine: bool,
    /// Integration step.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Exact event-level simulation through the Markovian cascade.
    SimulateHawkes {
        #[arg(long = "N")]
        n: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Euler-Maruyama path of the diffusion approximation.
    SimulateSde {
        #[arg(long = "N")]
        n: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Equilibrium, characteristic roots and periodic orbits of the limit system.
    LimitAnalysis,
    /// Explicit control between two states.
    Steer {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        to: Option<Vec<f64>>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Small-time local controllability certificates along the orbit.
    CertifyStlc {
        #[arg(long, value_delimiter = ',')]
        delta: Option<Vec<f64>>,
    },
    /// Numerical quasipotential V(x, y).
    Quasipotential {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        to: Option<Vec<f64>>,
    },
    /// Class-to-class cost matrix over the limit set.
    ClassCosts,
    /// Freidlin-Wentzell weights W(K_i) from a cost matrix.
    FwWeights {
        /// Cost matrix JSON; computed from the model when absent.
        #[arg(long, value_name = "PATH")]
        costs: Option<PathBuf>,
    },
    /// Exit times from a tube around the stable orbit.
    ExitTimes {
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<f64>>,
        #[arg(long)]
        replicas: Option<u64>,
    },
    /// Long-run occupation of the orbit tube and of a ball around x*.
    Occupation {
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<f64>>,
        #[arg(long)]
        replicas: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Weak error between the Hawkes system and its diffusion approximation.
    WeakError {
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<u64>>,
        #[arg(long)]
        replicas: Option<u64>,
        #[arg(long)]
        t: Option<f64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SimulateHawkes { .. } => "simulate-hawkes",
            Command::SimulateSde { .. } => "simulate-sde",
            Command::LimitAnalysis => "limit-analysis",
            Command::Steer { .. } => "steer",
            Command::CertifyStlc { .. } => "certify-stlc",
            Command::Quasipotential { .. } => "quasipotential",
            Command::ClassCosts => "class-costs",
            Command::FwWeights { .. } => "fw-weights",
            Command::ExitTimes { .. } => "exit-times",
            Command::Occupation { .. } => "occupation",
            Command::WeakError { .. } => "weak-error",
        }
    }
}

/// Failure classes mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(k) = cli.common.jobs {
        if k == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match commands::execute(&cli.common, &cli.command) {
        Ok(()) => 0,
        Err(f) => {
            match &f {
                Failure::Validation(m) => eprintln!("error: {m}"),
                Failure::Numerical(m) => eprintln!("numerical failure: {m}"),
            }
            f.code()
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OSC_HAWKES_LOG", "warn")).init();
    std::process::exit(run(std::env::args_os()));
}
