//! Closed-loop simulation: fixed-step RK4 under a state-feedback policy,
//! running-cost accumulation, rollout comparison and Monte Carlo
//! convergence studies.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{RngStream, StreamPurpose};
use crate::policy::Policy;
use crate::problem::OcpInstance;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Rollouts stop once `‖x‖ < stop_tol`; zero disables the test.
    pub stop_tol: f64,
    /// Rollouts are truncated once `‖x‖` exceeds this radius. `None` means
    /// ten times the domain diagonal.
    pub escape_radius: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_max: 20.0,
            stop_tol: 1e-3,
            escape_radius: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::invalid("t_max", "must be positive"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::invalid("stop_tol", "must be nonnegative"));
        }
        if let Some(r) = self.escape_radius {
            if !(r > 0.0) {
                return Err(Error::invalid("escape_radius", "must be positive"));
            }
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Trajectory<T: Real> {
    pub times: DVector<T>,
    /// K×n
    pub states: DMatrix<T>,
    /// K×m, the policy evaluated at the recorded states.
    pub controls: DMatrix<T>,
    /// Trapezoidal accumulation of `ℓ(x, u)` up to each sample.
    pub cost_so_far: DVector<T>,
    pub running_cost: T,
    pub converged: bool,
    pub convergence_time: Option<T>,
    pub diverged: bool,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> DVector<T> {
        self.states.row(self.len() - 1).transpose()
    }
}

/// One classical Runge–Kutta step of `ẋ = field(x)`.
pub fn rk4_step<T: Real, F>(field: F, x: &DVector<T>, dt: T) -> Result<DVector<T>>
where
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
{
    let half = dt * T::lit(0.5);
    let k1 = field(x)?;
    let k2 = field(&(x + &k1 * half))?;
    let k3 = field(&(x + &k2 * half))?;
    let k4 = field(&(x + &k3 * dt))?;
    let two = T::lit(2.0);
    Ok(x + (k1 + k2 * two + k3 * two + k4) * (dt / T::lit(6.0)))
}

/// `x ↦ A(x) + B(x)π(x)`, with the policy re-evaluated at every stage.
pub fn closed_loop<'a, T: Real, P: Policy<T> + ?Sized>(
    problem: &'a OcpInstance<T>,
    policy: &'a P,
) -> impl Fn(&DVector<T>) -> Result<DVector<T>> + 'a {
    move |x| {
        let u = policy.control(x)?;
        check_dim("policy output", problem.control_dim(), u.len())?;
        Ok(problem.dynamics(x, &u))
    }
}

pub fn rollout<T: Real, P: Policy<T> + ?Sized>(
    problem: &OcpInstance<T>,
    policy: &P,
    x0: &DVector<T>,
    config: &SimConfig,
) -> Result<Trajectory<T>> {
    config.validate()?;
    check_dim("initial state", problem.state_dim(), x0.len())?;
    let dt = T::lit(config.dt);
    let stop_tol = T::lit(config.stop_tol);
    let escape = T::lit(
        config
            .escape_radius
            .unwrap_or_else(|| 10.0 * problem.domain().diagonal().as_f64()),
    );
    let field = closed_loop(problem, policy);
    let half = T::lit(0.5);

    let mut states = vec![x0.clone()];
    let mut controls = vec![policy.control(x0)?];
    let mut costs = vec![T::zero()];
    let mut ell_prev = problem.running_cost(x0, &controls[0]);
    let mut converged = x0.norm() < stop_tol;
    let mut convergence_time = converged.then(T::zero);
    let mut diverged = false;

    if !converged {
        for step in 1..=config.steps() {
            let x_prev = states.last().expect("trajectory is never empty");
            let x = rk4_step(&field, x_prev, dt)?;
            if x.iter().any(|v| !v.is_finite_value()) {
                return Err(Error::NonFiniteState { step });
            }
            let u = policy.control(&x)?;
            let ell = problem.running_cost(&x, &u);
            let total = *costs.last().expect("nonempty") + (ell_prev + ell) * half * dt;
            ell_prev = ell;
            let norm = x.norm();
            states.push(x);
            controls.push(u);
            costs.push(total);
            if norm < stop_tol {
                converged = true;
                convergence_time = Some(T::from_count(step) * dt);
                break;
            }
            if norm > escape {
                diverged = true;
                break;
            }
        }
    }

    let k = states.len();
    let (n, m) = (problem.state_dim(), problem.control_dim());
    let times = DVector::from_fn(k, |i, _| T::from_count(i) * dt);
    let states = DMatrix::from_fn(k, n, |i, j| states[i][j]);
    let controls = DMatrix::from_fn(k, m, |i, j| controls[i][j]);
    let running_cost = costs[k - 1];
    Ok(Trajectory {
        times,
        states,
        controls,
        cost_so_far: DVector::from_vec(costs),
        running_cost,
        converged,
        convergence_time,
        diverged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutComparison<T: Real> {
    /// `max_k ‖x_a(t_k) − x_b(t_k)‖` over the common horizon.
    pub max_state_deviation: T,
    /// `J_a − J_b`
    pub cost_difference: T,
    pub a: Trajectory<T>,
    pub b: Trajectory<T>,
}

/// Runs both policies from `x0` over the full horizon (no early stop) and
/// compares them sample by sample.
pub fn compare_rollouts<T: Real, A: Policy<T> + ?Sized, B: Policy<T> + ?Sized>(
    problem: &OcpInstance<T>,
    policy_a: &A,
    policy_b: &B,
    x0: &DVector<T>,
    config: &SimConfig,
) -> Result<RolloutComparison<T>> {
    let cfg = SimConfig {
        stop_tol: 0.0,
        ..*config
    };
    let a = rollout(problem, policy_a, x0, &cfg)?;
    let b = rollout(problem, policy_b, x0, &cfg)?;
    let k = a.len().min(b.len());
    let mut dev = T::zero();
    for i in 0..k {
        dev = dev.max((a.states.row(i) - b.states.row(i)).norm());
    }
    Ok(RolloutComparison {
        max_state_deviation: dev,
        cost_difference: a.running_cost - b.running_cost,
        a,
        b,
    })
}

/// Distribution of initial conditions: uniform on an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConditionBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InitialConditionBox {
    pub fn from_domain<T: Real>(problem: &OcpInstance<T>) -> Self {
        Self::scaled_domain(problem, 1.0)
    }

    /// The training domain shrunk about the origin by `fraction`.
    pub fn scaled_domain<T: Real>(problem: &OcpInstance<T>, fraction: f64) -> Self {
        let d = problem.domain();
        Self {
            lower: d.lower().iter().map(|v| v.as_f64() * fraction).collect(),
            upper: d.upper().iter().map(|v| v.as_f64() * fraction).collect(),
        }
    }

    pub fn sample<T: Real>(&self, count: usize, seed: u64) -> Result<Vec<DVector<T>>> {
        check_dim("initial-condition box", self.lower.len(), self.upper.len())?;
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::invalid("initial-condition box", "lower must not exceed upper"));
        }
        let mut rng = RngStream::new(seed, StreamPurpose::InitialConditions).rng();
        Ok((0..count)
            .map(|_| {
                DVector::from_iterator(
                    self.lower.len(),
                    self.lower.iter().zip(&self.upper).map(|(&l, &u)| {
                        let x = if l < u { rng.random_range(l..u) } else { l };
                        T::lit(x)
                    }),
                )
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MonteCarloReport<T: Real> {
    pub initial_conditions: Vec<Vec<T>>,
    pub converged: Vec<bool>,
    pub diverged: Vec<bool>,
    pub convergence_times: Vec<Option<T>>,
    pub final_state_norms: Vec<T>,
    pub fraction_converged: f64,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory<T>>,
}

/// Independent rollouts from the given initial conditions, fanned out over
/// the worker pool; report order follows `initial_conditions`.
pub fn monte_carlo_from<T: Real, P: Policy<T> + Sync + ?Sized>(
    problem: &OcpInstance<T>,
    policy: &P,
    initial_conditions: &[DVector<T>],
    config: &SimConfig,
) -> Result<MonteCarloReport<T>> {
    if initial_conditions.is_empty() {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    let trajectories = initial_conditions
        .par_iter()
        .map(|x0| rollout(problem, policy, x0, config))
        .collect::<Result<Vec<_>>>()?;
    let converged: Vec<bool> = trajectories.iter().map(|t| t.converged).collect();
    let fraction = converged.iter().filter(|&&c| c).count() as f64 / converged.len() as f64;
    Ok(MonteCarloReport {
        initial_conditions: initial_conditions.iter().map(|x| x.iter().copied().collect()).collect(),
        diverged: trajectories.iter().map(|t| t.diverged).collect(),
        convergence_times: trajectories.iter().map(|t| t.convergence_time).collect(),
        final_state_norms: trajectories.iter().map(|t| t.final_state().norm()).collect(),
        converged,
        fraction_converged: fraction,
        trajectories,
    })
}

pub fn monte_carlo<T: Real, P: Policy<T> + Sync + ?Sized>(
    problem: &OcpInstance<T>,
    policy: &P,
    sampler: &InitialConditionBox,
    count: usize,
    seed: u64,
    config: &SimConfig,
) -> Result<MonteCarloReport<T>> {
    check_dim("initial-condition box", problem.state_dim(), sampler.lower.len())?;
    let ics = sampler.sample(count, seed)?;
    monte_carlo_from(problem, policy, &ics, config)
}
