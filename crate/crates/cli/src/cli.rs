//! Argument parsing and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;
use xtfc_hjb::PolicyMode;

use crate::checkpoint::Checkpoint;
use crate::commands::{run_evaluate, run_montecarlo, run_simulate, run_sweep, run_train};
use crate::config::{OutputSection, RunConfig, SimSection};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "xtfc", version, about = "Learn optimal feedback controllers from the stationary HJB equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Network seed for training; initial-condition seed for montecarlo.
    #[arg(long)]
    pub seed: Option<u64>,
    /// unconstrained, constrained_paper or constrained_clipped.
    #[arg(long)]
    pub policy_mode: Option<PolicyMode>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a value network and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate the learned value function on a grid.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Nodes per axis.
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Closed-loop rollout from one initial state.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated initial state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x0: Vec<f64>,
        /// Also run the closed-form optimal policy and compare.
        #[arg(long)]
        compare_exact: bool,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Rollouts from random initial conditions.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        /// Fraction of the training domain to draw initial states from.
        #[arg(long)]
        ic_fraction: Option<f64>,
        /// Skip the per-trajectory CSV files.
        #[arg(long)]
        no_trajectories: bool,
    },
    /// Train once per hidden-layer width.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated neuron counts.
        #[arg(long, value_delimiter = ',', required = true)]
        widths: Vec<usize>,
        /// Run the widths concurrently.
        #[arg(long)]
        parallel: bool,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Train { common }
            | Command::Evaluate { common, .. }
            | Command::Simulate { common, .. }
            | Command::Montecarlo { common, .. }
            | Command::Sweep { common, .. } => common,
        }
    }
}

/// What a command produced, for the caller to print.
#[derive(Debug)]
pub enum Outcome {
    Trained { final_loss: f64, out: PathBuf },
    Evaluated { max_abs_error: Option<f64>, rms_error: Option<f64>, points: usize },
    Simulated { summary: crate::commands::SimulateSummary },
    MonteCarlo { fraction_converged: f64, count: usize },
    Swept { runs: Vec<(String, usize, f64)> },
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Trained { final_loss, out } => {
                write!(f, "final_loss = {final_loss:.6e}\ncheckpoint written to {}", out.display())
            }
            Outcome::Evaluated {
                max_abs_error,
                rms_error,
                points,
            } => match (max_abs_error, rms_error) {
                (Some(m), Some(r)) => write!(f, "points = {points}\nmax_abs_error = {m:.6e}\nrms_error = {r:.6e}"),
                _ => write!(f, "points = {points}\nno closed-form value for this problem"),
            },
            Outcome::Simulated { summary } => {
                write!(
                    f,
                    "steps = {}\nconverged = {}\ncost = {:.6e}\nfinal_state_norm = {:.6e}",
                    summary.steps, summary.converged, summary.cost, summary.final_state_norm
                )?;
                if let Some(c) = &summary.comparison {
                    write!(
                        f,
                        "\nmax_state_deviation = {:.6e}\ncost_exact = {:.6e}\nexact_value_x0 = {:.6e}",
                        c.max_state_deviation, c.cost_exact, c.exact_value_x0
                    )?;
                }
                Ok(())
            }
            Outcome::MonteCarlo {
                fraction_converged,
                count,
            } => write!(f, "fraction_converged = {fraction_converged} ({count} initial conditions)"),
            Outcome::Swept { runs } => {
                write!(f, "name,neurons,final_loss")?;
                for (name, n, loss) in runs {
                    write!(f, "\n{name},{n},{loss:.6e}")?;
                }
                Ok(())
            }
        }
    }
}

fn training_config(common: &Common) -> CliResult<RunConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.network.seed = Some(seed);
    }
    if let Some(mode) = common.policy_mode {
        cfg.train.policy_mode = Some(mode);
    }
    Ok(cfg)
}

/// Loads the checkpoint plus the optional config whose `[sim]` and
/// `[output]` sections apply. Returns the policy mode to use.
fn checkpoint_inputs(common: &Common, checkpoint: &Path) -> CliResult<(Checkpoint, SimSection, OutputSection, PolicyMode)> {
    let ck = Checkpoint::load(checkpoint)?;
    let (sim, output) = match &common.config {
        Some(path) => {
            let cfg = RunConfig::load_with_problem(path, &ck.header.problem)?;
            if cfg.problem != ck.header.problem {
                warn!("the config's [problem] differs from the checkpoint's; using the checkpoint's");
            }
            (cfg.sim, cfg.output)
        }
        None => (SimSection::default(), OutputSection::default()),
    };
    let mode = common.policy_mode.unwrap_or(ck.header.policy_mode);
    Ok((ck, sim, output, mode))
}

fn dispatch(command: &Command) -> CliResult<Outcome> {
    match command {
        Command::Train { common } => {
            let cfg = training_config(common)?;
            let o = run_train(&cfg, &common.out)?;
            Ok(Outcome::Trained {
                final_loss: o.report.final_loss,
                out: common.out.join(crate::commands::CHECKPOINT_FILE),
            })
        }
        Command::Evaluate {
            common,
            checkpoint,
            grid_points,
        } => {
            let (ck, sim, mut output, mode) = checkpoint_inputs(common, checkpoint)?;
            if mode != ck.header.policy_mode {
                warn!("--policy-mode does not affect evaluate");
            }
            if common.seed.is_some() {
                warn!("--seed does not affect evaluate");
            }
            if let Some(g) = grid_points {
                output.grid_points = *g;
            }
            let s = run_evaluate(&ck, &output, &sim, &common.out)?;
            Ok(Outcome::Evaluated {
                max_abs_error: s.max_abs_error,
                rms_error: s.rms_error,
                points: s.points,
            })
        }
        Command::Simulate {
            common,
            checkpoint,
            x0,
            compare_exact,
            dt,
            t_max,
        } => {
            let (ck, mut sim, _, mode) = checkpoint_inputs(common, checkpoint)?;
            if common.seed.is_some() {
                warn!("--seed does not affect simulate");
            }
            if let Some(dt) = dt {
                sim.dt = *dt;
            }
            if let Some(t) = t_max {
                sim.t_max = *t;
            }
            let summary = run_simulate(&ck, mode, &sim, x0, *compare_exact, &common.out)?;
            Ok(Outcome::Simulated { summary })
        }
        Command::Montecarlo {
            common,
            checkpoint,
            count,
            ic_fraction,
            no_trajectories,
        } => {
            let (ck, mut sim, output, mode) = checkpoint_inputs(common, checkpoint)?;
            if let Some(c) = count {
                sim.montecarlo_count = *c;
            }
            if let Some(f) = ic_fraction {
                sim.ic_fraction = *f;
            }
            if let Some(s) = common.seed {
                sim.montecarlo_seed = s;
            }
            let save = output.save_trajectories && !no_trajectories;
            let r = run_montecarlo(&ck, mode, &sim, save, &common.out)?;
            Ok(Outcome::MonteCarlo {
                fraction_converged: r.fraction_converged,
                count: r.converged.len(),
            })
        }
        Command::Sweep {
            common,
            widths,
            parallel,
        } => {
            let cfg = training_config(common)?;
            let runs = run_sweep(&cfg, widths, *parallel, &common.out)?;
            Ok(Outcome::Swept {
                runs: runs.into_iter().map(|r| (r.name, r.neurons, r.final_loss)).collect(),
            })
        }
    }
}

/// Runs a parsed command, inside a dedicated worker pool when `--threads`
/// is given.
pub fn run(cli: &Cli) -> CliResult<Outcome> {
    match cli.command.common().threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| dispatch(&cli.command))
        }
        None => dispatch(&cli.command),
    }
}
