//! Sectioned TOML run configuration.
//!
//! Network and training keys are optional; anything left out takes the
//! per-benchmark default. [`RunConfig::effective`] fills every key so that
//! the echoed file reproduces the run on its own.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xtfc_hjb::problem::ProblemSpec;
use xtfc_hjb::train::{InitMode, Sampling, Scheduler};
use xtfc_hjb::{Activation, PolicyMode, SimConfig, TrainConfig};

use crate::error::{CliError, CliResult};

/// File name of the effective configuration written into output directories.
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Option<usize>,
    pub weight_scale: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub num_points: Option<usize>,
    pub sampling: Option<Sampling>,
    pub init_mode: Option<InitMode>,
    pub ridge: Option<f64>,
    pub lambda: Option<f64>,
    pub adam_lr: Option<f64>,
    pub adam_epochs: Option<usize>,
    pub scheduler: Option<Scheduler>,
    pub clip_norm: Option<f64>,
    pub lbfgs_iters: Option<usize>,
    pub lbfgs_memory: Option<usize>,
    pub policy_mode: Option<PolicyMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub t_max: f64,
    pub stop_tol: f64,
    pub escape_radius: Option<f64>,
    pub montecarlo_count: usize,
    pub montecarlo_seed: u64,
    /// Initial conditions are drawn from the training domain scaled by this
    /// factor about the origin.
    pub ic_fraction: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            dt: sim.dt,
            t_max: sim.t_max,
            stop_tol: sim.stop_tol,
            escape_radius: sim.escape_radius,
            montecarlo_count: 50,
            montecarlo_seed: 0,
            ic_fraction: 1.0,
        }
    }
}

impl SimSection {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            t_max: self.t_max,
            stop_tol: self.stop_tol,
            escape_radius: self.escape_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Nodes per axis of the evaluation grid.
    pub grid_points: usize,
    /// Evaluation box; the training domain when absent.
    pub grid_lower: Option<Vec<f64>>,
    pub grid_upper: Option<Vec<f64>>,
    /// Write one CSV per Monte Carlo trajectory.
    pub save_trajectories: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            grid_points: 101,
            grid_lower: None,
            grid_upper: None,
            save_trajectories: true,
        }
    }
}

impl RunConfig {
    /// A config for `problem` with every other section at its defaults.
    pub fn for_problem(problem: ProblemSpec) -> Self {
        Self {
            problem,
            network: NetworkSection::default(),
            train: TrainSection::default(),
            sim: SimSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: origin.clone(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &origin)
    }

    /// Like [`RunConfig::load`], but a missing `[problem]` section is filled
    /// from `fallback`. Used by commands that start from a checkpoint.
    pub fn load_with_problem(path: &Path, fallback: &ProblemSpec) -> CliResult<Self> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: origin.clone(),
            message: e.to_string(),
        })?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config {
            path: origin.clone(),
            message: e.to_string(),
        })?;
        if !table.contains_key("problem") {
            let value = toml::Value::try_from(fallback).map_err(|e| CliError::Config {
                path: origin.clone(),
                message: e.to_string(),
            })?;
            table.insert("problem".into(), value);
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config {
            path: origin,
            message: e.to_string(),
        })
    }

    /// Training settings: per-benchmark defaults overridden by whatever the
    /// file sets.
    pub fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig::for_benchmark(self.problem.benchmark());
        let n = &self.network;
        let t = &self.train;
        macro_rules! take {
            ($src:expr, $($field:ident),*) => {
                $(if let Some(v) = $src.$field.clone() { c.$field = v; })*
            };
        }
        take!(n, hidden, weight_scale, seed);
        take!(
            t,
            num_points,
            sampling,
            init_mode,
            ridge,
            lambda,
            adam_lr,
            adam_epochs,
            scheduler,
            clip_norm,
            lbfgs_iters,
            lbfgs_memory
        );
        c.policy_mode = t.policy_mode;
        c
    }

    /// Overwrites the network and training sections from `c`.
    pub fn set_train_config(&mut self, c: &TrainConfig) {
        self.network.hidden = Some(c.hidden);
        self.network.weight_scale = Some(c.weight_scale);
        self.network.seed = Some(c.seed);
        self.train = TrainSection {
            num_points: Some(c.num_points),
            sampling: Some(c.sampling),
            init_mode: Some(c.init_mode),
            ridge: Some(c.ridge),
            lambda: Some(c.lambda),
            adam_lr: Some(c.adam_lr),
            adam_epochs: Some(c.adam_epochs),
            scheduler: Some(c.scheduler),
            clip_norm: Some(c.clip_norm),
            lbfgs_iters: Some(c.lbfgs_iters),
            lbfgs_memory: Some(c.lbfgs_memory),
            policy_mode: c.policy_mode,
        };
    }

    /// Every key filled in, with the policy mode resolved against the problem.
    pub fn effective(&self) -> CliResult<Self> {
        let problem = self.problem.build::<f64>()?;
        let mut train = self.train_config();
        train.policy_mode = Some(train.resolved_policy_mode(&problem));
        let mut out = self.clone();
        out.set_train_config(&train);
        Ok(out)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config {
            path: "<effective config>".to_string(),
            message: e.to_string(),
        })
    }

    /// Writes the effective config into `dir`.
    pub fn echo(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(CONFIG_ECHO);
        let text = self.effective()?.to_toml()?;
        std::fs::write(&path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use xtfc_hjb::Benchmark;

    #[test]
    fn minimal_config_takes_benchmark_defaults() {
        let cfg = RunConfig::parse("[problem]\nname = \"detumbling\"\n", "inline").unwrap();
        assert_eq!(cfg.train_config(), TrainConfig::for_benchmark(Benchmark::Detumbling));
    }

    #[test]
    fn overrides_apply() {
        let text = r#"
            [problem]
            name = "double_integrator"
            control_limit = 0.5
            [network]
            hidden = 12
            seed = 4
            [train]
            adam_epochs = 3
            policy_mode = "constrained_clipped"
            scheduler = { kind = "none" }
            [sim]
            dt = 0.001
        "#;
        let cfg = RunConfig::parse(text, "inline").unwrap();
        let t = cfg.train_config();
        assert_eq!((t.hidden, t.seed, t.adam_epochs), (12, 4, 3));
        assert_eq!(t.policy_mode, Some(PolicyMode::ConstrainedClipped));
        assert_eq!(t.scheduler, Scheduler::None);
        assert_eq!(cfg.sim.sim_config().dt, 0.001);
    }

    #[test]
    fn unknown_keys_and_missing_problem_are_rejected() {
        let err = RunConfig::parse("[network]\nhidden = 3\n", "inline").unwrap_err();
        assert!(err.to_string().contains("problem"), "{err}");
        let err = RunConfig::parse("[problem]\nname = \"pendulum\"\n[train]\nepochs = 3\n", "inline").unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
        assert!(RunConfig::parse("[problem]\nname = \"cartpole\"\n", "inline").is_err());
        assert!(RunConfig::parse("[problem]\nname = \"pendulum\"\n[extra]\n", "inline").is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        for b in Benchmark::ALL {
            let mut cfg = RunConfig::for_problem(ProblemSpec::default_for(b));
            cfg.sim.escape_radius = Some(12.0);
            let eff = cfg.effective().unwrap();
            let back = RunConfig::parse(&eff.to_toml().unwrap(), "echo").unwrap();
            assert_eq!(back, eff);
            assert_eq!(back.train_config().policy_mode, eff.train.policy_mode);
            assert_eq!(back.effective().unwrap(), eff);
        }
    }

    #[test]
    fn unbounded_pendulum_survives_the_echo() {
        let cfg = RunConfig::parse("[problem]\nname = \"pendulum\"\ntorque_limit = \"none\"\n", "inline").unwrap();
        let back = RunConfig::parse(&cfg.effective().unwrap().to_toml().unwrap(), "echo").unwrap();
        match back.problem {
            ProblemSpec::Pendulum(p) => assert_eq!(p.torque_limit, None),
            other => panic!("{other:?}"),
        }
        assert_eq!(back.train.policy_mode, Some(PolicyMode::Unconstrained));
    }
}
