//! Optimal feedback controllers for infinite-horizon, control-affine
//! problems, learned by driving the stationary Hamilton–Jacobi–Bellman
//! residual to zero.
//!
//! The value function is approximated by an extreme learning machine placed
//! inside the constrained expression `V(x) = η(x) − η(0)`, so `V(0) = 0`
//! holds by construction. Training fits the output weights analytically to
//! a quadratic guess and then refines them on the HJB residual with Adam and
//! L-BFGS. The learned policy is `u* = ∇g*(−Bᵀ(x)V_x)`.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the CLI and test suites use.

pub mod error;
pub mod network;
pub mod numerics;
pub mod policy;
pub mod problem;
pub mod residual;
mod scalar;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
pub use network::{Activation, ElmParams as ElmParamsT, ValueNetwork as ValueNetworkT};
pub use policy::{synthesize_policy, Policy, PolicyMode};
pub use problem::{Benchmark, ProblemSpec};
pub use scalar::Real;
pub use sim::{MonteCarloReport as MonteCarloReportT, SimConfig, Trajectory as TrajectoryT};
pub use train::{train, TrainConfig, TrainReport};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
pub type ElmParams = network::ElmParams<f64>;
pub type ValueNetwork = network::ValueNetwork<f64>;
pub type OcpInstance = problem::OcpInstance<f64>;
pub type ControlBounds = problem::ControlBounds<f64>;
pub type Domain = problem::Domain<f64>;
pub type TrainingSet = residual::TrainingSet<f64>;
pub type ResidualBatch = residual::ResidualBatch<f64>;
pub type Trajectory = sim::Trajectory<f64>;
pub type MonteCarloReport = sim::MonteCarloReport<f64>;
