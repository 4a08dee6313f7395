//! Value-function approximator: a single hidden layer with fixed random input
//! weights (an extreme learning machine) inside the constrained expression
//! `V(x) = η(x) − η(0)`, so `V(0) = 0` holds for every set of output weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{seeded_uniform, RngStream, StreamPurpose};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `z·sigmoid(z)`
    #[default]
    Swish,
}

impl Activation {
    #[inline]
    pub fn eval<T: Real>(self, z: T) -> T {
        match self {
            Activation::Swish => swish(z),
        }
    }

    #[inline]
    pub fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Activation::Swish => swish_derivative(z),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Swish => "swish",
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn swish<T: Real>(z: T) -> T {
    z * sigmoid(z)
}

/// `s(z) + z·s(z)(1 − s(z))`
#[inline]
pub fn swish_derivative<T: Real>(z: T) -> T {
    let s = sigmoid(z);
    s + z * s * (T::one() - s)
}

/// Fixed input layer: row `j` of `weights` is `wⱼ`, `biases[j]` is `bⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmParams<T: Real> {
    weights: DMatrix<T>,
    biases: DVector<T>,
    activation: Activation,
    seed: u64,
    weight_scale: f64,
}

impl<T: Real> ElmParams<T> {
    /// Draws `W` (N×n, row-major order) and `b` i.i.d. uniform on
    /// `[−weight_scale, weight_scale]` from independent seeded streams.
    pub fn init(state_dim: usize, hidden: usize, seed: u64, weight_scale: f64) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::invalid("state_dim", "must be at least 1"));
        }
        if hidden == 0 {
            return Err(Error::invalid("hidden", "must be at least 1"));
        }
        if !(weight_scale > 0.0) || !weight_scale.is_finite() {
            return Err(Error::invalid("weight_scale", "must be positive and finite"));
        }
        let (lo, hi) = (T::lit(-weight_scale), T::lit(weight_scale));
        let w = seeded_uniform(
            RngStream::new(seed, StreamPurpose::Weights),
            hidden * state_dim,
            lo,
            hi,
        );
        let b = seeded_uniform(RngStream::new(seed, StreamPurpose::Biases), hidden, lo, hi);
        Ok(Self {
            weights: DMatrix::from_row_slice(hidden, state_dim, &w),
            biases: DVector::from_vec(b),
            activation: Activation::Swish,
            seed,
            weight_scale,
        })
    }

    /// Reassembles parameters from stored arrays (checkpoint loading, tests).
    pub fn from_parts(
        weights: DMatrix<T>,
        biases: DVector<T>,
        activation: Activation,
        seed: u64,
        weight_scale: f64,
    ) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::invalid("weights", "must be a nonempty N×n matrix"));
        }
        check_dim("biases", weights.nrows(), biases.len())?;
        Ok(Self {
            weights,
            biases,
            activation,
            seed,
            weight_scale,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn hidden_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<T> {
        &self.weights
    }

    pub fn biases(&self) -> &DVector<T> {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weight_scale(&self) -> f64 {
        self.weight_scale
    }

    /// `Wx + b`
    pub fn preactivation(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_dim("state", self.state_dim(), x.len())?;
        Ok(&self.weights * x + &self.biases)
    }

    /// `hⱼ = σ(wⱼᵀx + bⱼ)`
    pub fn hidden_features(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let act = self.activation;
        Ok(self.preactivation(x)?.map(|z| act.eval(z)))
    }

    /// `D(x)` (n×N) with column `j` equal to `σ′(wⱼᵀx + bⱼ)·wⱼ`, so that
    /// `∇ₓ(βᵀh(x)) = D(x)β`.
    pub fn hidden_feature_jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        let act = self.activation;
        let slopes = self.preactivation(x)?.map(|z| act.derivative(z));
        let mut d = self.weights.transpose();
        for (j, mut col) in d.column_iter_mut().enumerate() {
            col *= slopes[j];
        }
        Ok(d)
    }

    /// `Z = XWᵀ + 1bᵀ` for samples stored as rows of `X`.
    pub fn preactivations(&self, samples: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("sample matrix columns", self.state_dim(), samples.ncols())?;
        let mut z = samples * self.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += self.biases.transpose();
        }
        Ok(z)
    }

    /// The ELM design matrix `H[i, j] = σ(wⱼᵀx⁽ⁱ⁾ + bⱼ)`.
    pub fn build_h(&self, samples: &DMatrix<T>) -> Result<DMatrix<T>> {
        let act = self.activation;
        Ok(self.preactivations(samples)?.map(|z| act.eval(z)))
    }
}

/// ELM plus trainable output weights `β`, evaluated through the constrained
/// expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNetwork<T: Real> {
    elm: ElmParams<T>,
    beta: DVector<T>,
    anchor: DVector<T>,
}

impl<T: Real> ValueNetwork<T> {
    pub fn new(elm: ElmParams<T>, beta: DVector<T>) -> Result<Self> {
        check_dim("output weights", elm.hidden_count(), beta.len())?;
        let anchor = elm.hidden_features(&DVector::zeros(elm.state_dim()))?;
        Ok(Self { elm, beta, anchor })
    }

    pub fn zeros(elm: ElmParams<T>) -> Self {
        let n = elm.hidden_count();
        Self::new(elm, DVector::zeros(n)).expect("zero output weights match the hidden width")
    }

    pub fn elm(&self) -> &ElmParams<T> {
        &self.elm
    }

    pub fn beta(&self) -> &DVector<T> {
        &self.beta
    }

    pub fn set_beta(&mut self, beta: DVector<T>) -> Result<()> {
        check_dim("output weights", self.elm.hidden_count(), beta.len())?;
        self.beta = beta;
        Ok(())
    }

    pub fn with_beta(&self, beta: DVector<T>) -> Result<Self> {
        let mut out = self.clone();
        out.set_beta(beta)?;
        Ok(out)
    }

    /// `h₀ = h(0)`
    pub fn anchor(&self) -> &DVector<T> {
        &self.anchor
    }

    pub fn state_dim(&self) -> usize {
        self.elm.state_dim()
    }

    pub fn hidden_count(&self) -> usize {
        self.elm.hidden_count()
    }

    /// `V(x) = βᵀ(h(x) − h₀)`
    pub fn value(&self, x: &DVector<T>) -> Result<T> {
        let h = self.elm.hidden_features(x)?;
        Ok(self.beta.dot(&(h - &self.anchor)))
    }

    /// `V_x = D(x)β`; the anchor term is constant in `x`.
    pub fn gradient(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.elm.hidden_feature_jacobian(x)? * &self.beta)
    }
}
