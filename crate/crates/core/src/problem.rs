//! Control-affine infinite-horizon optimal control problems and the four
//! shipped benchmarks.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

pub type VectorField<T> = Arc<dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync>;
pub type InputMap<T> = Arc<dyn Fn(&DVector<T>) -> DMatrix<T> + Send + Sync>;
pub type ScalarField<T> = Arc<dyn Fn(&DVector<T>) -> T + Send + Sync>;

/// Axis-aligned box `Ω` containing the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain<T: Real> {
    lower: DVector<T>,
    upper: DVector<T>,
}

impl<T: Real> Domain<T> {
    pub fn new(lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        check_dim("domain bounds", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::invalid("domain", "must have at least one axis"));
        }
        for i in 0..lower.len() {
            if !(lower[i] < upper[i]) {
                return Err(Error::invalid(
                    "domain",
                    format!("axis {i}: lower bound must be below upper bound"),
                ));
            }
            if lower[i] > T::zero() || upper[i] < T::zero() {
                return Err(Error::invalid("domain", format!("axis {i} does not contain the origin")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(half_widths: &[f64]) -> Result<Self> {
        let upper = DVector::from_iterator(half_widths.len(), half_widths.iter().map(|&w| T::lit(w)));
        Self::new(-upper.clone(), upper)
    }

    pub fn lower(&self) -> &DVector<T> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<T> {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.len() == self.dim() && (0..x.len()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }

    pub fn diagonal(&self) -> T {
        (&self.upper - &self.lower).norm()
    }
}

/// Box control set `u_min ≤ u ≤ u_max`. Half-range `α` and midpoint `γ` are
/// derived on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds<T: Real> {
    u_min: DVector<T>,
    u_max: DVector<T>,
}

impl<T: Real> ControlBounds<T> {
    pub fn new(u_min: DVector<T>, u_max: DVector<T>) -> Result<Self> {
        check_dim("control bounds", u_min.len(), u_max.len())?;
        for i in 0..u_min.len() {
            if !(u_min[i] < u_max[i]) {
                return Err(Error::invalid(
                    "bounds",
                    format!("component {i}: u_min must be strictly below u_max"),
                ));
            }
        }
        Ok(Self { u_min, u_max })
    }

    pub fn symmetric(m: usize, limit: T) -> Result<Self> {
        Self::new(DVector::from_element(m, -limit), DVector::from_element(m, limit))
    }

    pub fn u_min(&self) -> &DVector<T> {
        &self.u_min
    }

    pub fn u_max(&self) -> &DVector<T> {
        &self.u_max
    }

    pub fn dim(&self) -> usize {
        self.u_min.len()
    }

    pub fn alpha(&self) -> DVector<T> {
        (&self.u_max - &self.u_min) * T::lit(0.5)
    }

    pub fn gamma(&self) -> DVector<T> {
        (&self.u_max + &self.u_min) * T::lit(0.5)
    }

    pub fn contains(&self, u: &DVector<T>) -> bool {
        u.len() == self.dim() && (0..u.len()).all(|i| self.u_min[i] <= u[i] && u[i] <= self.u_max[i])
    }
}

/// Quadratic control cost `g(u) = uᵀRu` with `R` validated symmetric
/// positive definite and its inverse cached.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCost<T: Real> {
    weight: DMatrix<T>,
    inverse: DMatrix<T>,
    diagonal: Option<DVector<T>>,
}

impl<T: Real> ControlCost<T> {
    pub fn new(weight: DMatrix<T>) -> Result<Self> {
        if !weight.is_square() || weight.nrows() == 0 {
            return Err(Error::invalid("R", "must be a nonempty square matrix"));
        }
        check_symmetric("R", &weight)?;
        let chol = weight
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("R", "must be positive definite"))?;
        let inverse = chol.inverse();
        let m = weight.nrows();
        let is_diag = (0..m).all(|i| (0..m).all(|j| i == j || weight[(i, j)] == T::zero()));
        let diagonal = is_diag.then(|| weight.diagonal());
        Ok(Self {
            weight,
            inverse,
            diagonal,
        })
    }

    pub fn weight(&self) -> &DMatrix<T> {
        &self.weight
    }

    pub fn inverse(&self) -> &DMatrix<T> {
        &self.inverse
    }

    /// Diagonal of `R` when `R` is diagonal.
    pub fn diagonal(&self) -> Option<&DVector<T>> {
        self.diagonal.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn eval(&self, u: &DVector<T>) -> T {
        u.dot(&(&self.weight * u))
    }
}

fn check_symmetric<T: Real>(name: &str, m: &DMatrix<T>) -> Result<()> {
    let scale = m.amax().max(T::one());
    if (m - m.transpose()).amax() > T::lit(1e-12) * scale {
        return Err(Error::invalid(name, "must be symmetric"));
    }
    Ok(())
}

fn check_psd<T: Real>(name: &str, m: &DMatrix<T>) -> Result<()> {
    check_symmetric(name, m)?;
    let scale = m.amax().max(T::one());
    let eig = m.clone().symmetric_eigenvalues();
    if eig.iter().any(|&e| e < -T::lit(1e-12) * scale) {
        return Err(Error::invalid(name, "must be positive semidefinite"));
    }
    Ok(())
}

/// `ẋ = A(x) + B(x)u` with running cost `r(x) + uᵀRu` over the domain `Ω`.
#[derive(Clone)]
pub struct OcpInstance<T: Real> {
    name: String,
    state_dim: usize,
    control_dim: usize,
    drift: VectorField<T>,
    input_map: InputMap<T>,
    state_cost: ScalarField<T>,
    control_cost: ControlCost<T>,
    state_weight: DMatrix<T>,
    bounds: Option<ControlBounds<T>>,
    domain: Domain<T>,
}

impl<T: Real> fmt::Debug for OcpInstance<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpInstance")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("control_weight", self.control_cost.weight())
            .field("state_weight", &self.state_weight)
            .field("bounds", &self.bounds)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

pub struct OcpBuilder<T: Real> {
    name: String,
    state_dim: usize,
    control_dim: usize,
    drift: VectorField<T>,
    input_map: InputMap<T>,
    state_cost: Option<ScalarField<T>>,
    control_weight: DMatrix<T>,
    state_weight: DMatrix<T>,
    bounds: Option<ControlBounds<T>>,
    domain: Option<Domain<T>>,
}

impl<T: Real> OcpBuilder<T> {
    /// Quadratic state cost `xᵀQx` unless overridden with [`Self::state_cost`].
    pub fn state_weight(mut self, q: DMatrix<T>) -> Self {
        self.state_weight = q;
        self
    }

    pub fn state_cost(mut self, r: impl Fn(&DVector<T>) -> T + Send + Sync + 'static) -> Self {
        self.state_cost = Some(Arc::new(r));
        self
    }

    pub fn control_weight(mut self, r: DMatrix<T>) -> Self {
        self.control_weight = r;
        self
    }

    pub fn bounds(mut self, bounds: Option<ControlBounds<T>>) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn domain(mut self, domain: Domain<T>) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn build(self) -> Result<OcpInstance<T>> {
        let (n, m) = (self.state_dim, self.control_dim);
        if n == 0 || m == 0 {
            return Err(Error::invalid("dimensions", "state and control dimensions must be positive"));
        }
        if self.state_weight.shape() != (n, n) {
            return Err(Error::invalid("Q", format!("must be {n}×{n}")));
        }
        check_psd("Q", &self.state_weight)?;
        if self.control_weight.shape() != (m, m) {
            return Err(Error::invalid("R", format!("must be {m}×{m}")));
        }
        let control_cost = ControlCost::new(self.control_weight)?;
        if let Some(b) = &self.bounds {
            check_dim("control bounds", m, b.dim())?;
        }
        let domain = match self.domain {
            Some(d) => d,
            None => Domain::symmetric(&vec![1.0; n])?,
        };
        check_dim("domain", n, domain.dim())?;

        let state_cost = match self.state_cost {
            Some(r) => r,
            None => {
                let q = self.state_weight.clone();
                Arc::new(move |x: &DVector<T>| x.dot(&(&q * x))) as ScalarField<T>
            }
        };

        let instance = OcpInstance {
            name: self.name,
            state_dim: n,
            control_dim: m,
            drift: self.drift,
            input_map: self.input_map,
            state_cost,
            control_cost,
            state_weight: self.state_weight,
            bounds: self.bounds,
            domain,
        };
        // Shape check at a representative point; closures cannot be typed
        // by dimension.
        let origin = DVector::zeros(n);
        check_dim("drift output", n, instance.drift(&origin).len())?;
        let b0 = instance.input_map(&origin);
        if b0.shape() != (n, m) {
            return Err(Error::invalid("input_map", format!("must return an {n}×{m} matrix")));
        }
        Ok(instance)
    }
}

impl<T: Real> OcpInstance<T> {
    pub fn builder(
        name: impl Into<String>,
        state_dim: usize,
        control_dim: usize,
        drift: impl Fn(&DVector<T>) -> DVector<T> + Send + Sync + 'static,
        input_map: impl Fn(&DVector<T>) -> DMatrix<T> + Send + Sync + 'static,
    ) -> OcpBuilder<T> {
        OcpBuilder {
            name: name.into(),
            state_dim,
            control_dim,
            drift: Arc::new(drift),
            input_map: Arc::new(input_map),
            state_cost: None,
            control_weight: DMatrix::identity(control_dim, control_dim),
            state_weight: DMatrix::identity(state_dim, state_dim),
            bounds: None,
            domain: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// `A(x)`
    pub fn drift(&self, x: &DVector<T>) -> DVector<T> {
        (self.drift)(x)
    }

    /// `B(x)`
    pub fn input_map(&self, x: &DVector<T>) -> DMatrix<T> {
        (self.input_map)(x)
    }

    /// `r(x)`
    pub fn state_cost(&self, x: &DVector<T>) -> T {
        (self.state_cost)(x)
    }

    pub fn control_cost(&self) -> &ControlCost<T> {
        &self.control_cost
    }

    /// `R`
    pub fn control_weight(&self) -> &DMatrix<T> {
        self.control_cost.weight()
    }

    /// `Q`
    pub fn state_weight(&self) -> &DMatrix<T> {
        &self.state_weight
    }

    pub fn bounds(&self) -> Option<&ControlBounds<T>> {
        self.bounds.as_ref()
    }

    pub fn domain(&self) -> &Domain<T> {
        &self.domain
    }

    /// Closed-loop vector field `A(x) + B(x)u`.
    pub fn dynamics(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        self.drift(x) + self.input_map(x) * u
    }

    /// Running cost `ℓ(x, u) = r(x) + uᵀRu`.
    pub fn running_cost(&self, x: &DVector<T>, u: &DVector<T>) -> T {
        self.state_cost(x) + self.control_cost.eval(u)
    }
}

/// Name-keyed registry of the shipped benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    DoubleIntegrator,
    NonlinearBenchmark,
    Pendulum,
    Detumbling,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::DoubleIntegrator,
        Benchmark::NonlinearBenchmark,
        Benchmark::Pendulum,
        Benchmark::Detumbling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::DoubleIntegrator => "double_integrator",
            Benchmark::NonlinearBenchmark => "nonlinear_benchmark",
            Benchmark::Pendulum => "pendulum",
            Benchmark::Detumbling => "detumbling",
        }
    }

    pub fn has_exact_solution(self) -> bool {
        matches!(self, Benchmark::DoubleIntegrator | Benchmark::NonlinearBenchmark)
    }

    /// Instance with default parameters.
    pub fn instance<T: Real>(self) -> OcpInstance<T> {
        ProblemSpec::default_for(self)
            .build()
            .expect("default benchmark parameters are valid")
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownProblem(s.to_string()))
    }
}

fn vec_of<T: Real>(xs: &[f64]) -> DVector<T> {
    DVector::from_iterator(xs.len(), xs.iter().map(|&v| T::lit(v)))
}

fn mat_of<T: Real, const N: usize>(rows: &[[f64; N]; N]) -> DMatrix<T> {
    DMatrix::from_fn(N, N, |i, j| T::lit(rows[i][j]))
}

fn domain_of<T: Real>(lower: &[f64], upper: &[f64]) -> Result<Domain<T>> {
    Domain::new(vec_of(lower), vec_of(upper))
}

fn symmetric_bounds<T: Real>(m: usize, limit: Option<f64>) -> Result<Option<ControlBounds<T>>> {
    limit
        .map(|l| {
            if !(l > 0.0) {
                return Err(Error::invalid("torque_limit", "must be positive"));
            }
            ControlBounds::symmetric(m, T::lit(l))
        })
        .transpose()
}

/// Optional control limits. `None` is written as the string `"none"` so
/// that an unbounded limit survives a round trip through a config file whose
/// default is bounded.
mod optional_limit {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(limit: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match limit {
            Some(v) => s.serialize_f64(*v),
            None => s.serialize_str("none"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Word(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Value(v) => Ok(Some(v)),
            Repr::Word(w) if w == "none" => Ok(None),
            Repr::Word(w) => Err(D::Error::custom(format!("expected a number or \"none\", got \"{w}\""))),
        }
    }
}

/// Parameters for the two planar benchmarks with closed-form solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanarParams {
    pub domain_lower: [f64; 2],
    pub domain_upper: [f64; 2],
    /// Optional symmetric bound `|u| ≤ control_limit`.
    #[serde(with = "optional_limit")]
    pub control_limit: Option<f64>,
}

impl Default for PlanarParams {
    fn default() -> Self {
        Self {
            domain_lower: [-1.0, -1.0],
            domain_upper: [1.0, 1.0],
            control_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    /// kg
    pub mass: f64,
    /// Hinge to centre of mass, m.
    pub length: f64,
    /// Inertia about the centre of mass, kg·m².
    pub inertia_com: f64,
    /// m/s²
    pub gravity: f64,
    pub q: [[f64; 2]; 2],
    pub r_weight: f64,
    /// N·m; `None` leaves the torque unbounded.
    #[serde(with = "optional_limit")]
    pub torque_limit: Option<f64>,
    pub domain_lower: [f64; 2],
    pub domain_upper: [f64; 2],
}

impl Default for PendulumParams {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            mass: 1.0,
            length: 0.5,
            inertia_com: 1.0 / 12.0,
            gravity: 9.81,
            q: [[1.0, 0.0], [0.0, 1.0]],
            r_weight: 1.0,
            torque_limit: Some(2.0),
            domain_lower: [-PI, -4.0],
            domain_upper: [PI, 4.0],
        }
    }
}

impl PendulumParams {
    /// `(a₂, b₂)` with `a₂ = mdg/(I + md²)` and `b₂ = 1/(I + md²)`.
    pub fn coefficients(&self) -> (f64, f64) {
        let pivot_inertia = self.inertia_com + self.mass * self.length * self.length;
        (
            self.mass * self.length * self.gravity / pivot_inertia,
            1.0 / pivot_inertia,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetumblingParams {
    /// Principal moments of inertia, kg·m².
    pub inertia: [f64; 3],
    pub q: [[f64; 3]; 3],
    pub r: [[f64; 3]; 3],
    #[serde(with = "optional_limit")]
    pub torque_limit: Option<f64>,
    pub domain_lower: [f64; 3],
    pub domain_upper: [f64; 3],
}

impl Default for DetumblingParams {
    fn default() -> Self {
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Self {
            inertia: [1.0, 2.0, 3.0],
            q: eye,
            r: eye,
            torque_limit: None,
            domain_lower: [-1.0; 3],
            domain_upper: [1.0; 3],
        }
    }
}

/// Complete, serializable parameterization of a benchmark instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ProblemSpec {
    DoubleIntegrator(PlanarParams),
    NonlinearBenchmark(PlanarParams),
    Pendulum(PendulumParams),
    Detumbling(DetumblingParams),
}

impl ProblemSpec {
    pub fn default_for(benchmark: Benchmark) -> Self {
        match benchmark {
            Benchmark::DoubleIntegrator => ProblemSpec::DoubleIntegrator(PlanarParams::default()),
            Benchmark::NonlinearBenchmark => ProblemSpec::NonlinearBenchmark(PlanarParams::default()),
            Benchmark::Pendulum => ProblemSpec::Pendulum(PendulumParams::default()),
            Benchmark::Detumbling => ProblemSpec::Detumbling(DetumblingParams::default()),
        }
    }

    pub fn benchmark(&self) -> Benchmark {
        match self {
            ProblemSpec::DoubleIntegrator(_) => Benchmark::DoubleIntegrator,
            ProblemSpec::NonlinearBenchmark(_) => Benchmark::NonlinearBenchmark,
            ProblemSpec::Pendulum(_) => Benchmark::Pendulum,
            ProblemSpec::Detumbling(_) => Benchmark::Detumbling,
        }
    }

    pub fn build<T: Real>(&self) -> Result<OcpInstance<T>> {
        match self {
            ProblemSpec::DoubleIntegrator(p) => make_double_integrator_with(p),
            ProblemSpec::NonlinearBenchmark(p) => make_nonlinear_benchmark_with(p),
            ProblemSpec::Pendulum(p) => make_pendulum(p),
            ProblemSpec::Detumbling(p) => make_detumbling(p),
        }
    }
}

/// `ẋ₁ = x₂, ẋ₂ = u` with cost `½∫(xᵀx + u²)`, i.e. `r(x) = ½xᵀx`, `R = [½]`.
pub fn make_double_integrator<T: Real>() -> OcpInstance<T> {
    make_double_integrator_with(&PlanarParams::default()).expect("default parameters are valid")
}

pub fn make_double_integrator_with<T: Real>(params: &PlanarParams) -> Result<OcpInstance<T>> {
    let half = T::lit(0.5);
    OcpInstance::builder(
        Benchmark::DoubleIntegrator.name(),
        2,
        1,
        |x: &DVector<T>| DVector::from_vec(vec![x[1], T::zero()]),
        |_: &DVector<T>| DMatrix::from_vec(2, 1, vec![T::zero(), T::one()]),
    )
    .state_weight(DMatrix::identity(2, 2) * half)
    .control_weight(DMatrix::from_element(1, 1, half))
    .bounds(symmetric_bounds(1, params.control_limit)?)
    .domain(domain_of(&params.domain_lower, &params.domain_upper)?)
    .build()
}

/// `ẋ₁ = −x₁ + x₂, ẋ₂ = −½(x₁ + x₂ − x₁²x₂) + x₁u` with cost `∫(xᵀx + u²)`.
pub fn make_nonlinear_benchmark<T: Real>() -> OcpInstance<T> {
    make_nonlinear_benchmark_with(&PlanarParams::default()).expect("default parameters are valid")
}

pub fn make_nonlinear_benchmark_with<T: Real>(params: &PlanarParams) -> Result<OcpInstance<T>> {
    let half = T::lit(0.5);
    OcpInstance::builder(
        Benchmark::NonlinearBenchmark.name(),
        2,
        1,
        move |x: &DVector<T>| {
            let (x1, x2) = (x[0], x[1]);
            DVector::from_vec(vec![-x1 + x2, -half * (x1 + x2 - x1 * x1 * x2)])
        },
        |x: &DVector<T>| DMatrix::from_vec(2, 1, vec![T::zero(), x[0]]),
    )
    .state_weight(DMatrix::identity(2, 2))
    .control_weight(DMatrix::identity(1, 1))
    .bounds(symmetric_bounds(1, params.control_limit)?)
    .domain(domain_of(&params.domain_lower, &params.domain_upper)?)
    .build()
}

/// Torque-limited inverted pendulum, `x₁` measured from upright:
/// `ẋ₁ = x₂, ẋ₂ = a₂ sin x₁ + b₂ u`.
pub fn make_pendulum<T: Real>(params: &PendulumParams) -> Result<OcpInstance<T>> {
    for (name, v) in [
        ("mass", params.mass),
        ("length", params.length),
        ("inertia_com", params.inertia_com),
        ("gravity", params.gravity),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(name, "physical parameters must be positive"));
        }
    }
    let (a2, b2) = params.coefficients();
    let (a2, b2) = (T::lit(a2), T::lit(b2));
    OcpInstance::builder(
        Benchmark::Pendulum.name(),
        2,
        1,
        move |x: &DVector<T>| DVector::from_vec(vec![x[1], a2 * x[0].sin()]),
        move |_: &DVector<T>| DMatrix::from_vec(2, 1, vec![T::zero(), b2]),
    )
    .state_weight(mat_of(&params.q))
    .control_weight(DMatrix::from_element(1, 1, T::lit(params.r_weight)))
    .bounds(symmetric_bounds(1, params.torque_limit)?)
    .domain(domain_of(&params.domain_lower, &params.domain_upper)?)
    .build()
}

/// Torque-free rigid body with body-rate state: `ẋ = I⁻¹(u − x × Ix)`.
pub fn make_detumbling<T: Real>(params: &DetumblingParams) -> Result<OcpInstance<T>> {
    if params.inertia.iter().any(|&j| !(j > 0.0) || !j.is_finite()) {
        return Err(Error::invalid("inertia", "principal moments must be positive (singular inertia)"));
    }
    let inertia: [T; 3] = params.inertia.map(T::lit);
    let inv: [T; 3] = inertia.map(|j| T::one() / j);
    OcpInstance::builder(
        Benchmark::Detumbling.name(),
        3,
        3,
        move |x: &DVector<T>| {
            let h = [inertia[0] * x[0], inertia[1] * x[1], inertia[2] * x[2]];
            let cross = [
                x[1] * h[2] - x[2] * h[1],
                x[2] * h[0] - x[0] * h[2],
                x[0] * h[1] - x[1] * h[0],
            ];
            DVector::from_vec(vec![-inv[0] * cross[0], -inv[1] * cross[1], -inv[2] * cross[2]])
        },
        move |_: &DVector<T>| DMatrix::from_diagonal(&DVector::from_row_slice(&inv)),
    )
    .state_weight(mat_of(&params.q))
    .control_weight(mat_of(&params.r))
    .bounds(symmetric_bounds(3, params.torque_limit)?)
    .domain(domain_of(&params.domain_lower, &params.domain_upper)?)
    .build()
}

fn require_exact(benchmark: Benchmark) -> Result<()> {
    if benchmark.has_exact_solution() {
        Ok(())
    } else {
        Err(Error::NoAnalyticSolution(benchmark.name().to_string()))
    }
}

/// Closed-form optimal value for the double integrator and the nonlinear
/// benchmark.
pub fn exact_value<T: Real>(benchmark: Benchmark, x: &DVector<T>) -> Result<T> {
    require_exact(benchmark)?;
    check_dim("state", 2, x.len())?;
    let (x1, x2) = (x[0], x[1]);
    Ok(match benchmark {
        Benchmark::DoubleIntegrator => {
            let c = T::lit(3f64.sqrt() / 2.0);
            c * x1 * x1 + c * x2 * x2 + x1 * x2
        }
        _ => T::lit(0.5) * x1 * x1 + x2 * x2,
    })
}

/// `∇V*` of [`exact_value`].
pub fn exact_value_gradient<T: Real>(benchmark: Benchmark, x: &DVector<T>) -> Result<DVector<T>> {
    require_exact(benchmark)?;
    check_dim("state", 2, x.len())?;
    let (x1, x2) = (x[0], x[1]);
    Ok(match benchmark {
        Benchmark::DoubleIntegrator => {
            let s3 = T::lit(3f64.sqrt());
            DVector::from_vec(vec![s3 * x1 + x2, s3 * x2 + x1])
        }
        _ => DVector::from_vec(vec![x1, x2 + x2]),
    })
}

/// Closed-form optimal control. The nonlinear benchmark's policy
/// `u* = −x₁x₂` follows from substituting `∇V*` into `−½R⁻¹BᵀV_x`.
pub fn exact_policy<T: Real>(benchmark: Benchmark, x: &DVector<T>) -> Result<DVector<T>> {
    require_exact(benchmark)?;
    check_dim("state", 2, x.len())?;
    let (x1, x2) = (x[0], x[1]);
    let u = match benchmark {
        Benchmark::DoubleIntegrator => -T::lit(3f64.sqrt()) * x2 - x1,
        _ => -x1 * x2,
    };
    Ok(DVector::from_element(1, u))
}
