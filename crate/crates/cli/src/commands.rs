//! The subcommands as library functions. Each writes its artifacts into an
//! output directory and returns a summary for the caller to print.

use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use xtfc_hjb::problem::{exact_policy, exact_value, ProblemSpec};
use xtfc_hjb::sim::{compare_rollouts, monte_carlo, rollout, InitialConditionBox};
use xtfc_hjb::{
    synthesize_policy, train, Benchmark, MonteCarloReport, OcpInstance, Policy, PolicyMode, TrainReport,
};

use crate::checkpoint::Checkpoint;
use crate::config::{OutputSection, RunConfig, SimSection};
use crate::error::{CliError, CliResult};
use crate::output::{
    ensure_dir, write_grid, write_json, write_loss_history, write_sweep_summary, write_trajectory, GridRow,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.xtfc";
pub const REPORT_FILE: &str = "report.json";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const GRID_FILE: &str = "value_grid.csv";
pub const EVALUATE_FILE: &str = "evaluate.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EXACT_TRAJECTORY_FILE: &str = "trajectory_exact.csv";
pub const SIMULATE_FILE: &str = "simulate.json";
pub const MONTECARLO_FILE: &str = "montecarlo.json";
pub const TRAJECTORY_DIR: &str = "trajectories";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Closed-form value and policy exist only for the unbounded planar
/// benchmarks.
pub fn has_exact_solution(spec: &ProblemSpec) -> bool {
    match spec {
        ProblemSpec::DoubleIntegrator(p) | ProblemSpec::NonlinearBenchmark(p) => p.control_limit.is_none(),
        _ => false,
    }
}

/// The closed-form optimal feedback of a planar benchmark.
pub struct ExactPolicy(pub Benchmark);

impl Policy<f64> for ExactPolicy {
    fn control(&self, x: &DVector<f64>) -> xtfc_hjb::Result<DVector<f64>> {
        exact_policy(self.0, x)
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

/// Trains on `config` and writes the checkpoint, report, loss history and
/// effective config. The config is written first so that a failed run
/// still records what it attempted.
pub fn run_train(config: &RunConfig, out: &Path) -> CliResult<TrainOutcome> {
    ensure_dir(out)?;
    let effective = config.effective()?;
    effective.echo(out)?;
    let problem = effective.problem.build::<f64>()?;
    let tc = effective.train_config();
    info!("training {} with {} neurons on {} points", problem.name(), tc.hidden, tc.num_points);
    let (net, report) = train(&problem, &tc)?;
    let checkpoint = Checkpoint::new(effective.problem.clone(), net, report.policy_mode, tc, report.final_loss);
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    write_json(&out.join(REPORT_FILE), &report)?;
    write_loss_history(&out.join(LOSS_FILE), &report.loss_history)?;
    Ok(TrainOutcome { checkpoint, report })
}

/// Config echoed by the commands that start from a checkpoint.
fn checkpoint_config(ck: &Checkpoint, mode: PolicyMode, sim: &SimSection, output: &OutputSection) -> RunConfig {
    let mut cfg = RunConfig::for_problem(ck.header.problem.clone());
    let mut tc = ck.header.train.clone();
    tc.policy_mode = Some(mode);
    cfg.set_train_config(&tc);
    cfg.sim = sim.clone();
    cfg.output = output.clone();
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateSummary {
    pub points: usize,
    pub grid_lower: Vec<f64>,
    pub grid_upper: Vec<f64>,
    pub grid_points: usize,
    /// Present when the problem has a closed-form value.
    pub max_abs_error: Option<f64>,
    pub rms_error: Option<f64>,
}

/// Tensor grid over `[lower, upper]`, first coordinate slowest.
pub fn grid_nodes(lower: &[f64], upper: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let n = lower.len();
    let axis = |k: usize, i: usize| {
        if per_axis == 1 {
            0.5 * (lower[k] + upper[k])
        } else {
            lower[k] + (upper[k] - lower[k]) * i as f64 / (per_axis - 1) as f64
        }
    };
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut flat| {
            let mut x = vec![0.0; n];
            for k in (0..n).rev() {
                x[k] = axis(k, flat % per_axis);
                flat /= per_axis;
            }
            x
        })
        .collect()
}

pub fn run_evaluate(ck: &Checkpoint, output: &OutputSection, sim: &SimSection, out: &Path) -> CliResult<EvaluateSummary> {
    ensure_dir(out)?;
    let problem = ck.header.problem.build::<f64>()?;
    checkpoint_config(ck, ck.header.policy_mode, sim, output).echo(out)?;
    let n = problem.state_dim();
    let d = problem.domain();
    let lower = output.grid_lower.clone().unwrap_or_else(|| d.lower().iter().copied().collect());
    let upper = output.grid_upper.clone().unwrap_or_else(|| d.upper().iter().copied().collect());
    if lower.len() != n || upper.len() != n {
        return Err(CliError::Usage(format!("grid bounds must have {n} components")));
    }
    if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
        return Err(CliError::Usage("grid lower bound exceeds upper bound".into()));
    }
    if output.grid_points == 0 {
        return Err(CliError::Usage("grid_points must be at least 1".into()));
    }
    let outside = (0..n).any(|k| lower[k] < d.lower()[k] || upper[k] > d.upper()[k]);
    if outside {
        warn!("evaluation grid extends beyond the training domain; errors there are extrapolation");
    }

    let exact = has_exact_solution(&ck.header.problem).then(|| ck.header.problem.benchmark());
    let nodes = grid_nodes(&lower, &upper, output.grid_points);
    let rows = nodes
        .into_par_iter()
        .map(|x| {
            let v = DVector::from_vec(x);
            let value = ck.network.value(&v)?;
            let exact = exact.map(|b| exact_value(b, &v)).transpose()?;
            Ok(GridRow {
                x: v.as_slice().to_vec(),
                value,
                exact,
            })
        })
        .collect::<xtfc_hjb::Result<Vec<_>>>()?;
    write_grid(&out.join(GRID_FILE), &rows)?;

    let (max_abs_error, rms_error) = if exact.is_some() {
        let errors: Vec<f64> = rows.iter().map(|r| (r.value - r.exact.unwrap_or(f64::NAN)).abs()).collect();
        let max = errors.iter().copied().fold(0.0, f64::max);
        let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
        (Some(max), Some(rms))
    } else {
        (None, None)
    };
    let summary = EvaluateSummary {
        points: rows.len(),
        grid_lower: lower,
        grid_upper: upper,
        grid_points: output.grid_points,
        max_abs_error,
        rms_error,
    };
    write_json(&out.join(EVALUATE_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub max_state_deviation: f64,
    pub cost_xtfc: f64,
    pub cost_exact: f64,
    /// `V*(x0)`
    pub exact_value_x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub x0: Vec<f64>,
    pub policy_mode: PolicyMode,
    pub steps: usize,
    pub converged: bool,
    pub convergence_time: Option<f64>,
    pub diverged: bool,
    pub cost: f64,
    pub final_state_norm: f64,
    /// Learned `V(x0)`.
    pub value_x0: f64,
    pub comparison: Option<Comparison>,
}

/// Closed-loop rollout from `x0`. With `compare_exact`, both the learned
/// and the exact policy run the full horizon and are compared step by step.
pub fn run_simulate(
    ck: &Checkpoint,
    mode: PolicyMode,
    sim: &SimSection,
    x0: &[f64],
    compare_exact: bool,
    out: &Path,
) -> CliResult<SimulateSummary> {
    let problem = ck.header.problem.build::<f64>()?;
    let n = problem.state_dim();
    if x0.len() != n {
        return Err(CliError::Usage(format!(
            "--x0 has {} components but {} has state dimension {n}",
            x0.len(),
            problem.name()
        )));
    }
    let benchmark = ck.header.problem.benchmark();
    if compare_exact && !has_exact_solution(&ck.header.problem) {
        return Err(xtfc_hjb::Error::NoAnalyticSolution(problem.name().to_string()).into());
    }
    ensure_dir(out)?;
    checkpoint_config(ck, mode, sim, &OutputSection::default()).echo(out)?;
    let x0v = DVector::from_column_slice(x0);
    let policy = synthesize_policy(&ck.network, &problem, mode)?;
    let cfg = sim.sim_config();

    let (traj, comparison) = if compare_exact {
        let cmp = compare_rollouts(&problem, &policy, &ExactPolicy(benchmark), &x0v, &cfg)?;
        write_trajectory(&out.join(EXACT_TRAJECTORY_FILE), &cmp.b)?;
        let comparison = Comparison {
            max_state_deviation: cmp.max_state_deviation,
            cost_xtfc: cmp.a.running_cost,
            cost_exact: cmp.b.running_cost,
            exact_value_x0: exact_value(benchmark, &x0v)?,
        };
        (cmp.a, Some(comparison))
    } else {
        (rollout(&problem, &policy, &x0v, &cfg)?, None)
    };
    write_trajectory(&out.join(TRAJECTORY_FILE), &traj)?;
    let summary = SimulateSummary {
        x0: x0.to_vec(),
        policy_mode: mode,
        steps: traj.len() - 1,
        converged: traj.converged,
        convergence_time: traj.convergence_time,
        diverged: traj.diverged,
        cost: traj.running_cost,
        final_state_norm: traj.final_state().norm(),
        value_x0: ck.network.value(&x0v)?,
        comparison,
    };
    write_json(&out.join(SIMULATE_FILE), &summary)?;
    Ok(summary)
}

/// Rollouts from `count` initial conditions drawn uniformly from the
/// training domain scaled by `sim.ic_fraction`.
pub fn run_montecarlo(
    ck: &Checkpoint,
    mode: PolicyMode,
    sim: &SimSection,
    save_trajectories: bool,
    out: &Path,
) -> CliResult<MonteCarloReport> {
    let problem: OcpInstance = ck.header.problem.build()?;
    if !(sim.ic_fraction > 0.0) {
        return Err(CliError::Usage("ic_fraction must be positive".into()));
    }
    ensure_dir(out)?;
    let output = OutputSection {
        save_trajectories,
        ..OutputSection::default()
    };
    checkpoint_config(ck, mode, sim, &output).echo(out)?;
    let policy = synthesize_policy(&ck.network, &problem, mode)?;
    let sampler = InitialConditionBox::scaled_domain(&problem, sim.ic_fraction);
    let report = monte_carlo(
        &problem,
        &policy,
        &sampler,
        sim.montecarlo_count,
        sim.montecarlo_seed,
        &sim.sim_config(),
    )?;
    if save_trajectories {
        let dir = out.join(TRAJECTORY_DIR);
        ensure_dir(&dir)?;
        let width = report.trajectories.len().to_string().len().max(3);
        for (i, t) in report.trajectories.iter().enumerate() {
            write_trajectory(&dir.join(format!("ic_{i:0width$}.csv")), t)?;
        }
    }
    write_json(&out.join(MONTECARLO_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub name: String,
    pub neurons: usize,
    pub dir: PathBuf,
    /// NaN when the run failed.
    pub final_loss: f64,
}

/// One training run per width in `out/n<width>`. Failed runs are logged
/// and kept in the summary with a NaN loss; the first failure is returned
/// after the summary has been written.
pub fn run_sweep(config: &RunConfig, widths: &[usize], parallel: bool, out: &Path) -> CliResult<Vec<SweepRun>> {
    if widths.is_empty() {
        return Err(CliError::Usage("--widths needs at least one value".into()));
    }
    ensure_dir(out)?;
    config.echo(out)?;
    let one = |&w: &usize| {
        let name = format!("n{w}");
        let dir = out.join(&name);
        let mut cfg = config.clone();
        cfg.network.hidden = Some(w);
        let result = run_train(&cfg, &dir).map(|o| o.report.final_loss);
        if let Err(e) = &result {
            warn!("sweep run {name} failed: {e}");
        }
        (name, w, dir, result)
    };
    let summary_path = out.join(SWEEP_FILE);
    let results = if parallel {
        widths.par_iter().map(one).collect::<Vec<_>>()
    } else {
        let mut done = Vec::with_capacity(widths.len());
        for w in widths {
            done.push(one(w));
            let rows: Vec<_> = done
                .iter()
                .map(|(name, w, _, r)| (name.clone(), *w, *r.as_ref().unwrap_or(&f64::NAN)))
                .collect();
            write_sweep_summary(&summary_path, &rows)?;
        }
        done
    };
    let rows: Vec<_> = results
        .iter()
        .map(|(name, w, _, r)| (name.clone(), *w, *r.as_ref().unwrap_or(&f64::NAN)))
        .collect();
    write_sweep_summary(&summary_path, &rows)?;

    let mut runs = Vec::with_capacity(results.len());
    let mut first_error = None;
    for (name, neurons, dir, result) in results {
        let final_loss = match result {
            Ok(l) => l,
            Err(e) => {
                first_error.get_or_insert(e);
                f64::NAN
            }
        };
        runs.push(SweepRun {
            name,
            neurons,
            dir,
            final_loss,
        });
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(runs),
    }
}
