//! Shared numerical kernels: regularized pseudoinverse solves, seeded random
//! streams, finite-difference oracles and small vector utilities.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Relative singular-value cutoff used by the unregularized pseudoinverse.
pub const PINV_RCOND: f64 = 1e-12;

/// What a random stream is used for. Each purpose gets its own ChaCha stream
/// id, so drawing more numbers for one purpose never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamPurpose {
    Weights,
    Biases,
    Sampling,
    InitBeta,
    InitialConditions,
}

impl StreamPurpose {
    fn stream_id(self) -> u64 {
        match self {
            StreamPurpose::Weights => 1,
            StreamPurpose::Biases => 2,
            StreamPurpose::Sampling => 3,
            StreamPurpose::InitBeta => 4,
            StreamPurpose::InitialConditions => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub purpose: StreamPurpose,
}

impl RngStream {
    pub fn new(seed: u64, purpose: StreamPurpose) -> Self {
        Self { seed, purpose }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.purpose.stream_id());
        rng
    }
}

/// `count` draws uniform on `[lo, hi)`, reproducible for a fixed stream.
pub fn seeded_uniform<T: Real>(stream: RngStream, count: usize, lo: T, hi: T) -> Vec<T> {
    assert!(lo < hi, "seeded_uniform requires lo < hi");
    let mut rng = stream.rng();
    uniform_draws(&mut rng, count, lo, hi)
}

pub(crate) fn uniform_draws<T: Real, R: Rng>(rng: &mut R, count: usize, lo: T, hi: T) -> Vec<T> {
    let (lo64, hi64) = (lo.as_f64(), hi.as_f64());
    (0..count)
        .map(|_| T::lit(rng.random_range(lo64..hi64)))
        .collect()
}

/// Solves `min ‖Hβ − T‖² + ridge·‖β‖²` through the thin SVD of `H`.
///
/// With `ridge = 0` this is the Moore–Penrose solution `H†T`: singular values
/// below `1e-12·σ_max` are dropped, which yields the minimum-norm
/// least-squares solution for rank-deficient `H`.
pub fn ridge_pinv_solve<T: Real>(h: &DMatrix<T>, t: &DVector<T>, ridge: T) -> DVector<T> {
    assert_eq!(h.nrows(), t.len(), "ridge_pinv_solve: row count mismatch");
    assert!(ridge >= T::zero(), "ridge_pinv_solve: ridge must be nonnegative");
    if h.nrows() == 0 || h.ncols() == 0 {
        return DVector::zeros(h.ncols());
    }
    let svd = h.clone().svd(true, true);
    let u = svd.u.as_ref().expect("SVD computed with U");
    let v_t = svd.v_t.as_ref().expect("SVD computed with Vᵀ");
    let sigma = &svd.singular_values;

    let s_max = sigma.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let cutoff = s_max * T::lit(PINV_RCOND);
    let filter = sigma.map(|s| {
        if ridge > T::zero() {
            s / (s * s + ridge)
        } else if s > cutoff {
            T::one() / s
        } else {
            T::zero()
        }
    });

    let projected = u.tr_mul(t).component_mul(&filter);
    v_t.tr_mul(&projected)
}

/// Central differences `(f(x+heᵢ) − f(x−heᵢ)) / 2h`.
pub fn finite_difference_gradient<T: Real, F>(f: F, x: &DVector<T>, h: T) -> DVector<T>
where
    F: Fn(&DVector<T>) -> T,
{
    assert!(h > T::zero(), "finite difference step must be positive");
    let mut probe = x.clone();
    let two_h = h + h;
    DVector::from_fn(x.len(), |i, _| {
        let xi = x[i];
        probe[i] = xi + h;
        let fp = f(&probe);
        probe[i] = xi - h;
        let fm = f(&probe);
        probe[i] = xi;
        (fp - fm) / two_h
    })
}

/// Rescales `g` onto the ball of radius `max_norm` when it lies outside.
pub fn clip_global_norm<T: Real>(g: &DVector<T>, max_norm: T) -> DVector<T> {
    assert!(max_norm > T::zero(), "clip norm must be positive");
    let norm = g.norm();
    if norm <= max_norm {
        g.clone()
    } else {
        g * (max_norm / norm)
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum<T: Real>(values: &[T]) -> T {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        values.iter().fold(T::zero(), |acc, &v| acc + v)
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}
