//! Feedback-law synthesis from the value gradient.
//!
//! With `w = −Bᵀ(x)V_x` the minimizing control is `u* = ∇g*(w)` where
//! `g*(w) = sup_u {uᵀw − g(u)}` is the convex conjugate of the control cost.
//! For `g(u) = uᵀRu` on an unbounded set this is `u* = ½R⁻¹w`; for box
//! bounds two variants are offered (see [`PolicyMode`]).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::network::ValueNetwork;
use crate::problem::{ControlBounds, ControlCost, OcpInstance};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// `u = ½R⁻¹w`
    Unconstrained,
    /// `uᵢ = wᵢ + γᵢ` if `|wᵢ| < αᵢ`, else `sgn(wᵢ)αᵢ + γᵢ`.
    ConstrainedPaper,
    /// `uᵢ = clamp(wᵢ / 2Rᵢᵢ, u_min,i, u_max,i)`; requires diagonal `R`.
    ConstrainedClipped,
}

impl PolicyMode {
    pub const ALL: [PolicyMode; 3] = [
        PolicyMode::Unconstrained,
        PolicyMode::ConstrainedPaper,
        PolicyMode::ConstrainedClipped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyMode::Unconstrained => "unconstrained",
            PolicyMode::ConstrainedPaper => "constrained_paper",
            PolicyMode::ConstrainedClipped => "constrained_clipped",
        }
    }

    pub fn is_constrained(self) -> bool {
        self != PolicyMode::Unconstrained
    }

    /// Bounded problems default to the piecewise law, the rest to the
    /// unconstrained one.
    pub fn default_for<T: Real>(problem: &OcpInstance<T>) -> Self {
        if problem.bounds().is_some() {
            PolicyMode::ConstrainedPaper
        } else {
            PolicyMode::Unconstrained
        }
    }

    /// Fails when a constrained mode is paired with a problem lacking bounds.
    pub fn validate<T: Real>(self, problem: &OcpInstance<T>) -> Result<()> {
        if self.is_constrained() && problem.bounds().is_none() {
            return Err(Error::MissingBounds(self.name().to_string()));
        }
        if self == PolicyMode::ConstrainedClipped && problem.control_cost().diagonal().is_none() {
            return Err(Error::NonDiagonalControlWeight);
        }
        Ok(())
    }
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("policy_mode", format!("unknown mode `{s}`")))
    }
}

/// `w = −Bᵀ vx`
pub fn control_preimage<T: Real>(vx: &DVector<T>, b: &DMatrix<T>) -> Result<DVector<T>> {
    check_dim("value gradient", b.nrows(), vx.len())?;
    Ok(-b.tr_mul(vx))
}

/// `u = ½R⁻¹w`, which equals `−½R⁻¹BᵀV_x`.
pub fn policy_unconstrained<T: Real>(w: &DVector<T>, cost: &ControlCost<T>) -> Result<DVector<T>> {
    check_dim("control preimage", cost.dim(), w.len())?;
    Ok(cost.inverse() * w * T::lit(0.5))
}

/// The piecewise saturation law with half-range `α` and midpoint `γ`. At
/// `|wᵢ| = αᵢ` the saturated branch is taken; both branches agree there.
pub fn policy_constrained_paper<T: Real>(w: &DVector<T>, bounds: &ControlBounds<T>) -> Result<DVector<T>> {
    check_dim("control preimage", bounds.dim(), w.len())?;
    let (alpha, gamma) = (bounds.alpha(), bounds.gamma());
    Ok(DVector::from_fn(w.len(), |i, _| {
        if w[i].abs() < alpha[i] {
            w[i] + gamma[i]
        } else {
            w[i].signum() * alpha[i] + gamma[i]
        }
    }))
}

/// Projection of the unconstrained minimizer onto the box; exact conjugate
/// gradient for separable `g(u) = Σ Rᵢᵢuᵢ²`.
pub fn policy_constrained_clipped<T: Real>(
    w: &DVector<T>,
    cost: &ControlCost<T>,
    bounds: &ControlBounds<T>,
) -> Result<DVector<T>> {
    check_dim("control preimage", bounds.dim(), w.len())?;
    let diag = cost.diagonal().ok_or(Error::NonDiagonalControlWeight)?;
    check_dim("control weight", w.len(), diag.len())?;
    let (lo, hi) = (bounds.u_min(), bounds.u_max());
    Ok(DVector::from_fn(w.len(), |i, _| {
        let u = w[i] / (diag[i] + diag[i]);
        u.max(lo[i]).min(hi[i])
    }))
}

fn require_bounds<T: Real>(bounds: Option<&ControlBounds<T>>, mode: PolicyMode) -> Result<&ControlBounds<T>> {
    bounds.ok_or_else(|| Error::MissingBounds(mode.name().to_string()))
}

/// `u*(w)` under the selected mode.
pub fn optimal_control<T: Real>(
    w: &DVector<T>,
    cost: &ControlCost<T>,
    bounds: Option<&ControlBounds<T>>,
    mode: PolicyMode,
) -> Result<DVector<T>> {
    match mode {
        PolicyMode::Unconstrained => policy_unconstrained(w, cost),
        PolicyMode::ConstrainedPaper => policy_constrained_paper(w, require_bounds(bounds, mode)?),
        PolicyMode::ConstrainedClipped => policy_constrained_clipped(w, cost, require_bounds(bounds, mode)?),
    }
}

/// `g*(w)`. Unconstrained: `¼wᵀR⁻¹w`. Constrained: `wᵀu* − g(u*)` with `u*`
/// from the selected law.
pub fn conjugate_value<T: Real>(
    w: &DVector<T>,
    cost: &ControlCost<T>,
    bounds: Option<&ControlBounds<T>>,
    mode: PolicyMode,
) -> Result<T> {
    Ok(conjugate_with_gradient(w, cost, bounds, mode)?.value)
}

/// `g*(w)` with its gradient and the control that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Conjugate<T: Real> {
    pub value: T,
    /// `∂g*/∂w`. Equal to `control` whenever the law is the true maximizer
    /// (unconstrained and clipped modes); for the piecewise law with
    /// `R ≠ ½I` it carries the extra term `J(w − 2Ru*)`, with `J` the
    /// diagonal 0/1 mask of unsaturated components.
    pub gradient: DVector<T>,
    pub control: DVector<T>,
}

pub fn conjugate_with_gradient<T: Real>(
    w: &DVector<T>,
    cost: &ControlCost<T>,
    bounds: Option<&ControlBounds<T>>,
    mode: PolicyMode,
) -> Result<Conjugate<T>> {
    match mode {
        PolicyMode::Unconstrained => {
            let u = policy_unconstrained(w, cost)?;
            Ok(Conjugate {
                value: T::lit(0.5) * w.dot(&u),
                gradient: u.clone(),
                control: u,
            })
        }
        PolicyMode::ConstrainedClipped => {
            let u = policy_constrained_clipped(w, cost, require_bounds(bounds, mode)?)?;
            Ok(Conjugate {
                value: w.dot(&u) - cost.eval(&u),
                gradient: u.clone(),
                control: u,
            })
        }
        PolicyMode::ConstrainedPaper => {
            let bounds = require_bounds(bounds, mode)?;
            let u = policy_constrained_paper(w, bounds)?;
            let ru = cost.weight() * &u;
            let value = w.dot(&u) - u.dot(&ru);
            let alpha = bounds.alpha();
            let gradient = DVector::from_fn(w.len(), |i, _| {
                if w[i].abs() < alpha[i] {
                    u[i] + w[i] - (ru[i] + ru[i])
                } else {
                    u[i]
                }
            });
            Ok(Conjugate {
                value,
                gradient,
                control: u,
            })
        }
    }
}

/// Anything that maps a state to a control.
pub trait Policy<T: Real> {
    fn control(&self, x: &DVector<T>) -> Result<DVector<T>>;
}

impl<T: Real, F> Policy<T> for F
where
    F: Fn(&DVector<T>) -> DVector<T>,
{
    fn control(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(self(x))
    }
}

/// `x ↦ u*(−Bᵀ(x)∇V(x))` for a trained network.
#[derive(Debug, Clone, Copy)]
pub struct LearnedPolicy<'a, T: Real> {
    net: &'a ValueNetwork<T>,
    problem: &'a OcpInstance<T>,
    mode: PolicyMode,
}

impl<T: Real> LearnedPolicy<'_, T> {
    pub fn mode(&self) -> PolicyMode {
        self.mode
    }
}

impl<T: Real> Policy<T> for LearnedPolicy<'_, T> {
    fn control(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let vx = self.net.gradient(x)?;
        let w = control_preimage(&vx, &self.problem.input_map(x))?;
        optimal_control(&w, self.problem.control_cost(), self.problem.bounds(), self.mode)
    }
}

pub fn synthesize_policy<'a, T: Real>(
    net: &'a ValueNetwork<T>,
    problem: &'a OcpInstance<T>,
    mode: PolicyMode,
) -> Result<LearnedPolicy<'a, T>> {
    check_dim("network input", problem.state_dim(), net.state_dim())?;
    mode.validate(problem)?;
    Ok(LearnedPolicy { net, problem, mode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, seeded_uniform, RngStream, StreamPurpose};
    use crate::problem::{make_double_integrator, make_pendulum, PendulumParams};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn scalar_cost(r: f64) -> ControlCost<f64> {
        ControlCost::new(dmatrix![r]).unwrap()
    }

    fn unit_bounds(lo: f64, hi: f64) -> ControlBounds<f64> {
        ControlBounds::new(dvector![lo], dvector![hi]).unwrap()
    }

    /// Brute-force `sup_u {uw − r u²}` over a uniform grid on `[lo, hi]`.
    fn grid_sup(w: f64, r: f64, lo: f64, hi: f64, cells: usize) -> (f64, f64) {
        (0..=cells)
            .map(|k| lo + (hi - lo) * k as f64 / cells as f64)
            .map(|u| (u * w - r * u * u, u))
            .fold((f64::NEG_INFINITY, 0.0), |best, cand| if cand.0 > best.0 { cand } else { best })
    }

    #[test]
    fn preimage_examples() {
        let b = dmatrix![0.0; 1.0];
        assert_relative_eq!(
            control_preimage(&dvector![3f64.sqrt(), 1.0], &b).unwrap(),
            dvector![-1.0]
        );
        assert_eq!(control_preimage(&dvector![0.0, 0.0], &b).unwrap(), dvector![0.0]);
        assert_eq!(control_preimage(&dvector![2.0, 5.0], &dmatrix![0.0; 0.0]).unwrap(), dvector![0.0]);
        assert!(control_preimage(&dvector![1.0], &b).is_err());
    }

    #[test]
    fn unconstrained_examples() {
        let u = |w: f64, r: f64| policy_unconstrained(&dvector![w], &scalar_cost(r)).unwrap()[0];
        assert_relative_eq!(u(-1.0, 0.5), -1.0, epsilon = 1e-15);
        assert_eq!(u(0.0, 0.5), 0.0);
        assert_relative_eq!(u(4.0, 2.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn constrained_paper_examples() {
        let b = unit_bounds(-1.0, 1.0);
        assert_eq!(policy_constrained_paper(&dvector![0.5], &b).unwrap(), dvector![0.5]);
        assert_eq!(policy_constrained_paper(&dvector![-3.0], &b).unwrap(), dvector![-1.0]);
        let shifted = unit_bounds(0.0, 2.0);
        assert_eq!(policy_constrained_paper(&dvector![0.5], &shifted).unwrap(), dvector![1.5]);
    }

    #[test]
    fn constrained_paper_is_continuous_and_onto_the_box() {
        let b = ControlBounds::new(dvector![-1.0, 0.5], dvector![3.0, 1.5]).unwrap();
        let alpha = b.alpha();
        let eps = 1e-12;
        for i in 0..2 {
            for sign in [-1.0, 1.0] {
                let mut at = DVector::zeros(2);
                at[i] = sign * alpha[i];
                let mut inside = at.clone();
                inside[i] -= sign * eps;
                let ua = policy_constrained_paper(&at, &b).unwrap();
                let ui = policy_constrained_paper(&inside, &b).unwrap();
                assert!(f64::abs(ua[i] - ui[i]) <= 2.0 * eps);
                let extreme = if sign > 0.0 { b.u_max()[i] } else { b.u_min()[i] };
                assert_eq!(ua[i], extreme);
            }
        }
        let draws = seeded_uniform(RngStream::new(2, StreamPurpose::Sampling), 2000, -10.0, 10.0);
        for w in draws.chunks(2) {
            assert!(b.contains(&policy_constrained_paper(&DVector::from_row_slice(w), &b).unwrap()));
        }
    }

    #[test]
    fn clipped_examples() {
        let b = unit_bounds(-1.0, 1.0);
        assert_eq!(policy_constrained_clipped(&dvector![-3.0], &scalar_cost(0.5), &b).unwrap(), dvector![-1.0]);
        let (_, u_grid) = grid_sup(-3.0, 0.5, -1.0, 1.0, 20_000);
        assert!((u_grid + 1.0).abs() <= 1e-4);
        assert_eq!(policy_constrained_clipped(&dvector![0.0], &scalar_cost(0.5), &b).unwrap(), dvector![0.0]);
        let wide = unit_bounds(-5.0, 5.0);
        let u = policy_constrained_clipped(&dvector![2.0], &scalar_cost(1.0), &wide).unwrap();
        assert_eq!(u, dvector![1.0]);
        assert_eq!(u, policy_unconstrained(&dvector![2.0], &scalar_cost(1.0)).unwrap());

        let coupled = ControlCost::new(dmatrix![1.0, 0.2; 0.2, 1.0]).unwrap();
        let b2 = ControlBounds::symmetric(2, 1.0).unwrap();
        assert!(matches!(
            policy_constrained_clipped(&dvector![1.0, 1.0], &coupled, &b2),
            Err(Error::NonDiagonalControlWeight)
        ));
    }

    #[test]
    fn saturating_and_clipped_agree_when_r_is_half_identity() {
        let cost = ControlCost::new(DMatrix::identity(2, 2) * 0.5).unwrap();
        let b = ControlBounds::symmetric(2, 1.3).unwrap();
        let draws = seeded_uniform(RngStream::new(3, StreamPurpose::Sampling), 4000, -4.0, 4.0);
        for w in draws.chunks(2) {
            let w = DVector::from_row_slice(w);
            assert_eq!(
                policy_constrained_paper(&w, &b).unwrap(),
                policy_constrained_clipped(&w, &cost, &b).unwrap()
            );
        }
    }

    #[test]
    fn conjugate_examples() {
        let sup = grid_sup(2.0, 1.0, -10.0, 10.0, 200_000).0;
        let g = conjugate_value(&dvector![2.0], &scalar_cost(1.0), None, PolicyMode::Unconstrained).unwrap();
        assert_relative_eq!(g, 1.0, epsilon = 1e-15);
        assert!((g - sup).abs() < 1e-6);
        assert_relative_eq!(
            conjugate_value(&dvector![4.0], &scalar_cost(2.0), None, PolicyMode::Unconstrained).unwrap(),
            2.0,
            epsilon = 1e-15
        );
        let b = unit_bounds(-1.0, 1.0);
        for mode in PolicyMode::ALL {
            assert_eq!(conjugate_value(&dvector![0.0], &scalar_cost(0.5), Some(&b), mode).unwrap(), 0.0);
        }
        assert!(matches!(
            conjugate_value(&dvector![1.0], &scalar_cost(1.0), None, PolicyMode::ConstrainedPaper),
            Err(Error::MissingBounds(_))
        ));
    }

    #[test]
    fn fenchel_young_inequality() {
        let draws = seeded_uniform(RngStream::new(4, StreamPurpose::Sampling), 40_000, -1.0, 1.0);
        let cost = scalar_cost(0.8);
        let b = unit_bounds(-1.5, 1.0);
        for pair in draws.chunks(4) {
            let w = dvector![pair[0] * 5.0];
            let u_free = pair[1] * 5.0;
            let u_box = -1.5 + (pair[2] + 1.0) * 1.25;
            let g_free = conjugate_value(&w, &cost, None, PolicyMode::Unconstrained).unwrap();
            assert!(u_free * w[0] - cost.eval(&dvector![u_free]) <= g_free + 1e-9);
            let g_box = conjugate_value(&w, &cost, Some(&b), PolicyMode::ConstrainedClipped).unwrap();
            assert!(u_box * w[0] - cost.eval(&dvector![u_box]) <= g_box + 1e-9);
        }
        // Equality at the maximizer, within grid resolution.
        for w in [-4.0, -0.7, 0.3, 2.5] {
            let (sup, _) = grid_sup(w, 0.8, -1.5, 1.0, 100_000);
            let g = conjugate_value(&dvector![w], &cost, Some(&b), PolicyMode::ConstrainedClipped).unwrap();
            assert!((g - sup).abs() < 1e-8, "w={w}: {g} vs {sup}");
        }
    }

    #[test]
    fn unconstrained_policy_is_the_grid_argmin() {
        let draws = seeded_uniform(RngStream::new(5, StreamPurpose::Sampling), 200, -1.0, 1.0);
        for pair in draws.chunks(2) {
            let w = pair[0] * 3.0;
            let r = 0.2 + (pair[1] + 1.0);
            let u = policy_unconstrained(&dvector![w], &scalar_cost(r)).unwrap()[0];
            let cells = 40_000;
            let (lo, hi) = (-10.0, 10.0);
            let (_, u_grid) = grid_sup(w, r, lo, hi, cells);
            assert!((u - u_grid).abs() <= (hi - lo) / cells as f64);
            // Stationarity ∇g(u*) + Bᵀvx = 2Ru* − w = 0.
            assert!((2.0 * r * u - w).abs() < 1e-10);
        }
    }

    #[test]
    fn conjugate_gradient_matches_finite_differences() {
        let cost = ControlCost::new(DMatrix::from_diagonal(&dvector![1.0, 0.3])).unwrap();
        let b = ControlBounds::new(dvector![-1.0, -0.5], dvector![2.0, 0.5]).unwrap();
        let draws = seeded_uniform(RngStream::new(6, StreamPurpose::Sampling), 400, -4.0, 4.0);
        for mode in PolicyMode::ALL {
            for w in draws.chunks(2) {
                let w = DVector::from_row_slice(w);
                let c = conjugate_with_gradient(&w, &cost, Some(&b), mode).unwrap();
                let fd = finite_difference_gradient(
                    |v| conjugate_value(v, &cost, Some(&b), mode).unwrap(),
                    &w,
                    1e-6,
                );
                assert!((&c.gradient - &fd).amax() < 1e-6, "{mode}: {} vs {}", c.gradient, fd);
            }
        }
    }

    #[test]
    fn synthesized_policy_respects_mode_requirements() {
        let di = make_double_integrator::<f64>();
        let elm = crate::network::ElmParams::init(2, 10, 0, 1.0).unwrap();
        let net = ValueNetwork::zeros(elm);
        assert!(synthesize_policy(&net, &di, PolicyMode::ConstrainedPaper).is_err());
        let pol = synthesize_policy(&net, &di, PolicyMode::Unconstrained).unwrap();
        assert_eq!(pol.control(&dvector![0.2, 0.1]).unwrap(), dvector![0.0]);

        let pend = make_pendulum::<f64>(&PendulumParams::default()).unwrap();
        let beta = DVector::from_fn(10, |j, _| 50.0 * ((j as f64) - 4.5));
        let net = ValueNetwork::new(crate::network::ElmParams::init(2, 10, 0, 1.0).unwrap(), beta).unwrap();
        let pol = synthesize_policy(&net, &pend, PolicyMode::ConstrainedPaper).unwrap();
        let draws = seeded_uniform(RngStream::new(8, StreamPurpose::Sampling), 400, -3.0, 3.0);
        for x in draws.chunks(2) {
            let u = pol.control(&DVector::from_row_slice(x)).unwrap();
            assert!(u[0].abs() <= 2.0);
        }
    }

    proptest! {
        #[test]
        fn clipped_and_saturating_ranges(w in -50.0f64..50.0) {
            let b = unit_bounds(-2.0, 2.0);
            let u = policy_constrained_clipped(&dvector![w], &scalar_cost(1.0), &b).unwrap();
            prop_assert!(b.contains(&u));
            let u = policy_constrained_paper(&dvector![w], &b).unwrap();
            prop_assert!(b.contains(&u));
        }
    }
}
