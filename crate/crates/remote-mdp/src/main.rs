use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use remote_mdp::cli::{self, Command, Overrides};
use remote_mdp::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "remote-mdp",
    version,
    about = "Solve, benchmark, and simulate joint sampling-and-control of a Markov source over a random-delay channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Path to the experiment config (also accepted as a positional).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Positional config path.
    #[arg(value_name = "CONFIG")]
    config_pos: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    fn config_path(&self) -> Result<PathBuf, String> {
        match (&self.config, &self.config_pos) {
            (Some(a), Some(b)) if a != b => {
                Err("give the config either positionally or via --config, not both".into())
            }
            (Some(a), _) => Ok(a.clone()),
            (None, Some(b)) => Ok(b.clone()),
            (None, None) => Err("missing config path (positional or --config)".into()),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute h* and the optimal policy with the chosen algorithm.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Solver: bisec-mrvi or fpbi.
        #[arg(long, value_name = "NAME")]
        algorithm: Option<String>,
        /// Root-search tolerance.
        #[arg(long, value_name = "F")]
        epsilon: Option<f64>,
    },
    /// Solve the zero-wait and age-optimal threshold benchmarks.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "F")]
        epsilon: Option<f64>,
    },
    /// Solve, then run the closed-loop simulation under the optimal policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "NAME")]
        algorithm: Option<String>,
        #[arg(long, value_name = "F")]
        epsilon: Option<f64>,
        /// Simulation seed override.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Horizon override in slots.
        #[arg(long, value_name = "N")]
        horizon: Option<u64>,
        /// Also write the per-slot trajectory CSV.
        #[arg(long)]
        trajectory: bool,
    },
    /// Solve and simulate all policies over a grid of delay parameters p.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid as LO:HI:STEP, e.g. 0.1:0.9:0.1.
        #[arg(long, value_name = "LO:HI:STEP")]
        p: Option<String>,
        #[arg(long, value_name = "F")]
        epsilon: Option<f64>,
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        #[arg(long, value_name = "N")]
        horizon: Option<u64>,
    },
    /// Run both solvers on one model and record their traces.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "F")]
        epsilon: Option<f64>,
    },
    /// Print bounds, chain diagnostics, and the state enumeration.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Also dump the kernel and q tables to CSV.
        #[arg(long)]
        dump_tables: bool,
    },
    /// Brute-force policy enumeration on tiny instances.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "F")]
        epsilon: Option<f64>,
        /// Maximum allowed |states| x |decisions|.
        #[arg(long, value_name = "N", default_value_t = 64)]
        budget: usize,
    },
}

fn parse_algorithm(name: &Option<String>) -> Result<Option<remote_mdp::config::Algorithm>, String> {
    match name {
        None => Ok(None),
        Some(s) => s.parse().map(Some),
    }
}

fn dispatch(cmd: Cmd) -> Result<(), String> {
    let (command, common, ov) = match cmd {
        Cmd::Solve {
            common,
            algorithm,
            epsilon,
        } => (
            Command::Solve,
            common,
            Overrides {
                algorithm: parse_algorithm(&algorithm)?,
                epsilon,
                ..Default::default()
            },
        ),
        Cmd::Benchmark { common, epsilon } => (
            Command::Benchmark,
            common,
            Overrides {
                epsilon,
                ..Default::default()
            },
        ),
        Cmd::Simulate {
            common,
            algorithm,
            epsilon,
            seed,
            horizon,
            trajectory,
        } => (
            Command::Simulate,
            common,
            Overrides {
                algorithm: parse_algorithm(&algorithm)?,
                epsilon,
                seed,
                horizon,
                trajectory,
                ..Default::default()
            },
        ),
        Cmd::Sweep {
            common,
            p,
            epsilon,
            seed,
            horizon,
        } => {
            let p_grid = match p {
                Some(spec) => Some(cli::parse_p_grid(&spec).map_err(|e| e.to_string())?),
                None => None,
            };
            (
                Command::Sweep,
                common,
                Overrides {
                    p_grid,
                    epsilon,
                    seed,
                    horizon,
                    ..Default::default()
                },
            )
        }
        Cmd::Convergence { common, epsilon } => (
            Command::Convergence,
            common,
            Overrides {
                epsilon,
                ..Default::default()
            },
        ),
        Cmd::Inspect {
            common,
            dump_tables,
        } => (
            Command::Inspect,
            common,
            Overrides {
                dump_tables,
                ..Default::default()
            },
        ),
        Cmd::Oracle {
            common,
            epsilon,
            budget,
        } => (
            Command::Oracle,
            common,
            Overrides {
                epsilon,
                budget: Some(budget),
                ..Default::default()
            },
        ),
    };

    let path = common.config_path()?;
    let mut ov = ov;
    if ov.out_dir.is_none() {
        ov.out_dir = common.out.clone();
    }
    let cfg = ExperimentConfig::parse_file(&path).map_err(|e| e.to_string())?;
    cli::run(command, &cfg, &ov).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
