//! Stationary HJB residual, the training loss and its analytic gradient with
//! respect to the output weights.
//!
//! The residual at `x` is `V_xᵀA(x) + r(x) − g*(−Bᵀ(x)V_x)`; the loss is
//! `mean(r⁽ⁱ⁾²) + λ‖β‖²`. Because `V_x = D(x)β`, the per-point gradient of
//! the residual is `D(x)ᵀ(A(x) + B(x)∇g*(w))`.
//!
//! Two evaluation paths exist. The free functions [`loss`] and
//! [`loss_gradient_beta`] walk the points one by one through the network
//! API. [`TrainingSet`] caches everything that does not depend on `β`
//! (activation slopes, drift, input maps, state costs) for a fixed point set
//! and evaluates loss and gradient with two matrix products per chunk.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::network::{ElmParams, ValueNetwork};
use crate::numerics::pairwise_sum;
use crate::policy::{conjugate_with_gradient, control_preimage, PolicyMode};
use crate::problem::OcpInstance;
use crate::scalar::Real;

/// Rows per work unit. Fixed so that reductions, and therefore every loss
/// and gradient bit, do not depend on the worker count.
pub const CHUNK_ROWS: usize = 512;

/// Residual for an arbitrary value gradient `vx` at `x`.
pub fn hjb_residual_from_gradient<T: Real>(
    problem: &OcpInstance<T>,
    mode: PolicyMode,
    x: &DVector<T>,
    vx: &DVector<T>,
) -> Result<T> {
    check_dim("state", problem.state_dim(), x.len())?;
    let w = control_preimage(vx, &problem.input_map(x))?;
    let conj = conjugate_with_gradient(&w, problem.control_cost(), problem.bounds(), mode)?;
    Ok(vx.dot(&problem.drift(x)) + problem.state_cost(x) - conj.value)
}

pub fn hjb_residual<T: Real>(
    net: &ValueNetwork<T>,
    problem: &OcpInstance<T>,
    mode: PolicyMode,
    x: &DVector<T>,
) -> Result<T> {
    hjb_residual_from_gradient(problem, mode, x, &net.gradient(x)?)
}

fn check_batch<T: Real>(problem: &OcpInstance<T>, points: &DMatrix<T>, lambda: T) -> Result<()> {
    if points.nrows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    check_dim("training points", problem.state_dim(), points.ncols())?;
    if !(lambda >= T::zero()) {
        return Err(Error::invalid("lambda", "must be nonnegative"));
    }
    Ok(())
}

fn regularizer<T: Real>(beta: &DVector<T>, lambda: T) -> T {
    lambda * beta.norm_squared()
}

/// `mean(r⁽ⁱ⁾²) + λ‖β‖²`, evaluated point by point.
pub fn loss<T: Real>(
    net: &ValueNetwork<T>,
    problem: &OcpInstance<T>,
    mode: PolicyMode,
    points: &DMatrix<T>,
    lambda: T,
) -> Result<T> {
    check_batch(problem, points, lambda)?;
    let squares = points
        .row_iter()
        .map(|row| hjb_residual(net, problem, mode, &row.transpose()).map(|r| r * r))
        .collect::<Result<Vec<T>>>()?;
    Ok(pairwise_sum(&squares) / T::from_count(points.nrows()) + regularizer(net.beta(), lambda))
}

/// `(2/M)Σ r⁽ⁱ⁾D(x⁽ⁱ⁾)ᵀ(A(x⁽ⁱ⁾) + B(x⁽ⁱ⁾)∇g*(w⁽ⁱ⁾)) + 2λβ`, evaluated point by
/// point.
pub fn loss_gradient_beta<T: Real>(
    net: &ValueNetwork<T>,
    problem: &OcpInstance<T>,
    mode: PolicyMode,
    points: &DMatrix<T>,
    lambda: T,
) -> Result<DVector<T>> {
    check_batch(problem, points, lambda)?;
    let mut grad = DVector::zeros(net.hidden_count());
    for row in points.row_iter() {
        let x = row.transpose();
        let d = net.elm().hidden_feature_jacobian(&x)?;
        let vx = &d * net.beta();
        let b = problem.input_map(&x);
        let w = control_preimage(&vx, &b)?;
        let conj = conjugate_with_gradient(&w, problem.control_cost(), problem.bounds(), mode)?;
        let drift = problem.drift(&x);
        let r = vx.dot(&drift) + problem.state_cost(&x) - conj.value;
        let field = drift + b * conj.gradient;
        grad += d.tr_mul(&field) * r;
    }
    let two = T::lit(2.0);
    Ok(grad * (two / T::from_count(points.nrows())) + net.beta() * (two * lambda))
}

/// Residuals, loss and gradient for one `β` over a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBatch<T: Real> {
    pub residuals: DVector<T>,
    /// `mean(r²)` alone.
    pub data_loss: T,
    pub lambda: T,
    pub beta_norm_sq: T,
    pub loss: T,
    pub grad_beta: DVector<T>,
}

impl<T: Real> ResidualBatch<T> {
    pub fn recomputed_loss(&self) -> T {
        let sq: Vec<T> = self.residuals.iter().map(|&r| r * r).collect();
        pairwise_sum(&sq) / T::from_count(self.residuals.len()) + self.lambda * self.beta_norm_sq
    }
}

#[derive(Debug, Clone)]
struct Chunk<T: Real> {
    /// `σ′(wⱼᵀx⁽ⁱ⁾ + bⱼ)`, rows × N.
    slopes: DMatrix<T>,
    /// `A(x⁽ⁱ⁾)`, rows × n.
    drift: DMatrix<T>,
    input_maps: Vec<DMatrix<T>>,
    state_costs: DVector<T>,
}

/// Fixed training points with all `β`-independent quantities precomputed.
#[derive(Debug, Clone)]
pub struct TrainingSet<T: Real> {
    points: DMatrix<T>,
    weights: DMatrix<T>,
    chunks: Vec<Chunk<T>>,
}

impl<T: Real> TrainingSet<T> {
    pub fn new(elm: &ElmParams<T>, problem: &OcpInstance<T>, points: &DMatrix<T>) -> Result<Self> {
        check_batch(problem, points, T::zero())?;
        check_dim("network input", problem.state_dim(), elm.state_dim())?;
        let (m_pts, n) = points.shape();
        let starts: Vec<usize> = (0..m_pts).step_by(CHUNK_ROWS).collect();
        let act = elm.activation();
        let chunks = starts
            .par_iter()
            .map(|&start| {
                let rows = CHUNK_ROWS.min(m_pts - start);
                let block = points.rows(start, rows).into_owned();
                let slopes = elm.preactivations(&block)?.map(|z| act.derivative(z));
                let mut drift = DMatrix::zeros(rows, n);
                let mut input_maps = Vec::with_capacity(rows);
                let mut state_costs = DVector::zeros(rows);
                for (i, row) in block.row_iter().enumerate() {
                    let x = row.transpose();
                    drift.set_row(i, &problem.drift(&x).transpose());
                    input_maps.push(problem.input_map(&x));
                    state_costs[i] = problem.state_cost(&x);
                }
                Ok(Chunk {
                    slopes,
                    drift,
                    input_maps,
                    state_costs,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            points: points.clone(),
            weights: elm.weights().clone(),
            chunks,
        })
    }

    pub fn points(&self) -> &DMatrix<T> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn hidden_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn evaluate(
        &self,
        beta: &DVector<T>,
        problem: &OcpInstance<T>,
        mode: PolicyMode,
        lambda: T,
    ) -> Result<ResidualBatch<T>> {
        check_dim("output weights", self.hidden_count(), beta.len())?;
        if !(lambda >= T::zero()) {
            return Err(Error::invalid("lambda", "must be nonnegative"));
        }
        let n = self.weights.ncols();
        // diag(β)W, so that V_x for a chunk is slopes · scaled.
        let mut scaled = self.weights.clone();
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            row *= beta[j];
        }
        let cost = problem.control_cost();
        let bounds = problem.bounds();

        let partials = self
            .chunks
            .par_iter()
            .map(|chunk| -> Result<(Vec<T>, DMatrix<T>)> {
                let vx_all = &chunk.slopes * &scaled;
                let rows = vx_all.nrows();
                let mut residuals = Vec::with_capacity(rows);
                let mut weighted = DMatrix::zeros(rows, n);
                for i in 0..rows {
                    let vx = vx_all.row(i).transpose();
                    let b = &chunk.input_maps[i];
                    let w = control_preimage(&vx, b)?;
                    let conj = conjugate_with_gradient(&w, cost, bounds, mode)?;
                    let drift = chunk.drift.row(i).transpose();
                    let r = vx.dot(&drift) + chunk.state_costs[i] - conj.value;
                    let field = drift + b * conj.gradient;
                    weighted.set_row(i, &(field * r).transpose());
                    residuals.push(r);
                }
                Ok((residuals, chunk.slopes.tr_mul(&weighted)))
            })
            .collect::<Result<Vec<_>>>()?;

        let m_pts = self.len();
        let mut residuals = Vec::with_capacity(m_pts);
        let mut accum = DMatrix::zeros(self.hidden_count(), n);
        for (r, p) in partials {
            residuals.extend(r);
            accum += p;
        }
        let inv_m = T::one() / T::from_count(m_pts);
        let two = T::lit(2.0);
        let grad_data = DVector::from_fn(self.hidden_count(), |j, _| {
            self.weights.row(j).dot(&accum.row(j)) * two * inv_m
        });
        let squares: Vec<T> = residuals.iter().map(|&r| r * r).collect();
        let data_loss = pairwise_sum(&squares) * inv_m;
        let beta_norm_sq = beta.norm_squared();
        Ok(ResidualBatch {
            residuals: DVector::from_vec(residuals),
            data_loss,
            lambda,
            beta_norm_sq,
            loss: data_loss + lambda * beta_norm_sq,
            grad_beta: grad_data + beta * (two * lambda),
        })
    }
}

/// One-shot batch evaluation without keeping the cache.
pub fn residual_batch<T: Real>(
    net: &ValueNetwork<T>,
    problem: &OcpInstance<T>,
    mode: PolicyMode,
    points: &DMatrix<T>,
    lambda: T,
) -> Result<ResidualBatch<T>> {
    TrainingSet::new(net.elm(), problem, points)?.evaluate(net.beta(), problem, mode, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_uniform, RngStream, StreamPurpose};
    use crate::problem::{exact_value_gradient, make_nonlinear_benchmark, Benchmark};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn random_points(n: usize, count: usize, seed: u64) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            count,
            n,
            &seeded_uniform(RngStream::new(seed, StreamPurpose::Sampling), count * n, -1.0, 1.0),
        )
    }

    fn random_net(n: usize, hidden: usize, seed: u64, scale: f64) -> ValueNetwork<f64> {
        let elm = ElmParams::init(n, hidden, seed, 1.0).unwrap();
        let beta = seeded_uniform(RngStream::new(seed, StreamPurpose::InitBeta), hidden, -scale, scale);
        ValueNetwork::new(elm, DVector::from_vec(beta)).unwrap()
    }

    #[test]
    fn exact_solutions_zero_the_residual() {
        let di = Benchmark::DoubleIntegrator.instance::<f64>();
        let x = dvector![0.6, -0.2];
        let vx = exact_value_gradient(Benchmark::DoubleIntegrator, &x).unwrap();
        let r = hjb_residual_from_gradient(&di, PolicyMode::Unconstrained, &x, &vx).unwrap();
        assert!(r.abs() < 1e-12);

        let nl = make_nonlinear_benchmark::<f64>();
        let x = dvector![0.3, -0.7];
        let vx = exact_value_gradient(Benchmark::NonlinearBenchmark, &x).unwrap();
        let r = hjb_residual_from_gradient(&nl, PolicyMode::Unconstrained, &x, &vx).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn zero_beta_residual_is_state_cost() {
        for b in Benchmark::ALL {
            let p = b.instance::<f64>();
            let mode = PolicyMode::default_for(&p);
            let net = ValueNetwork::zeros(ElmParams::init(p.state_dim(), 6, 1, 1.0).unwrap());
            let zero = DVector::zeros(p.state_dim());
            assert_eq!(hjb_residual(&net, &p, mode, &zero).unwrap(), 0.0);

            let pts = random_points(p.state_dim(), 40, 3);
            let expected: f64 = pts
                .row_iter()
                .map(|r| p.state_cost(&r.transpose()).powi(2))
                .sum::<f64>()
                / 40.0;
            let l = loss(&net, &p, mode, &pts, 0.0).unwrap();
            assert_relative_eq!(l, expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn residual_vanishes_at_origin_when_input_map_vanishes() {
        // B(0) = 0 for the nonlinear benchmark, so every β gives r(0) = 0.
        let p = make_nonlinear_benchmark::<f64>();
        for seed in 0..10 {
            let net = random_net(2, 15, seed, 10.0);
            assert_eq!(hjb_residual(&net, &p, PolicyMode::Unconstrained, &DVector::zeros(2)).unwrap(), 0.0);
        }
    }

    #[test]
    fn regularizer_adds_exactly() {
        let p = Benchmark::DoubleIntegrator.instance::<f64>();
        let net = random_net(2, 12, 9, 1.0);
        let pts = random_points(2, 30, 1);
        let l0 = loss(&net, &p, PolicyMode::Unconstrained, &pts, 0.0).unwrap();
        let l1 = loss(&net, &p, PolicyMode::Unconstrained, &pts, 0.25).unwrap();
        assert_relative_eq!(l1 - l0, 0.25 * net.beta().norm_squared(), epsilon = 1e-14);
    }

    #[test]
    fn empty_and_mismatched_batches_error() {
        let p = Benchmark::DoubleIntegrator.instance::<f64>();
        let net = random_net(2, 4, 0, 1.0);
        assert!(matches!(
            loss(&net, &p, PolicyMode::Unconstrained, &DMatrix::zeros(0, 2), 0.0),
            Err(Error::EmptyTrainingSet)
        ));
        assert!(loss(&net, &p, PolicyMode::Unconstrained, &DMatrix::zeros(3, 3), 0.0).is_err());
        assert!(loss(&net, &p, PolicyMode::Unconstrained, &DMatrix::zeros(3, 2), -1.0).is_err());
    }

    #[test]
    fn cached_path_matches_pointwise_path() {
        for b in Benchmark::ALL {
            let p = b.instance::<f64>();
            let n = p.state_dim();
            let mode = PolicyMode::default_for(&p);
            let net = random_net(n, 30, 5, 2.0);
            // More than one chunk.
            let pts = random_points(n, CHUNK_ROWS + 77, 6);
            let batch = residual_batch(&net, &p, mode, &pts, 1e-3).unwrap();
            let l = loss(&net, &p, mode, &pts, 1e-3).unwrap();
            let g = loss_gradient_beta(&net, &p, mode, &pts, 1e-3).unwrap();
            assert_relative_eq!(batch.loss, l, max_relative = 1e-12);
            assert!((&batch.grad_beta - &g).norm() <= 1e-12 * g.norm().max(1.0));
            assert_relative_eq!(batch.recomputed_loss(), batch.loss, max_relative = 1e-12);
        }
    }

    #[test]
    fn unconstrained_residual_is_quadratic_in_beta() {
        let p = Benchmark::Detumbling.instance::<f64>();
        let net = random_net(3, 20, 2, 1.0);
        let pts = random_points(3, 50, 8);
        let r_inv = p.control_cost().inverse().clone();
        for row in pts.row_iter() {
            let x = row.transpose();
            let d = net.elm().hidden_feature_jacobian(&x).unwrap();
            let a = d.tr_mul(&p.drift(&x));
            let bm = p.input_map(&x);
            let dbeta = &d * net.beta();
            let btv = bm.tr_mul(&dbeta);
            let quadratic = net.beta().dot(&a) + p.state_cost(&x) - 0.25 * btv.dot(&(&r_inv * &btv));
            let generic = hjb_residual(&net, &p, PolicyMode::Unconstrained, &x).unwrap();
            assert!((quadratic - generic).abs() < 1e-12);
        }
    }
}
