use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::clip_global_norm;
use crate::scalar::Real;

/// Learning-rate schedule for the Adam stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheduler {
    /// `lr ← lr·factor` after `patience` epochs without a loss improvement
    /// larger than [`PLATEAU_MIN_DELTA`].
    PlateauHalving { patience: usize, factor: f64 },
    None,
}

impl Default for Scheduler {
    fn default() -> Self {
        Scheduler::PlateauHalving {
            patience: 200,
            factor: 0.5,
        }
    }
}

pub const PLATEAU_MIN_DELTA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSettings<T: Real> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub epochs: usize,
    /// `+∞` disables clipping.
    pub clip_norm: T,
    pub scheduler: Scheduler,
}

impl<T: Real> AdamSettings<T> {
    pub fn new(lr: T, epochs: usize, clip_norm: T, scheduler: Scheduler) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            epochs,
            clip_norm,
            scheduler,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord<T> {
    pub loss: T,
    pub lr: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamOutcome<T: Real> {
    /// Best iterate seen, including the starting point.
    pub best: DVector<T>,
    pub best_loss: T,
    /// Loss at the iterate entering each epoch, and the rate applied to it.
    pub history: Vec<EpochRecord<T>>,
}

struct Plateau<T> {
    best: T,
    stale: usize,
}

/// Full-batch Adam with global-norm gradient clipping. `objective` returns
/// `(loss, gradient)`.
pub fn adam<T: Real, F>(mut objective: F, start: DVector<T>, settings: &AdamSettings<T>) -> Result<AdamOutcome<T>>
where
    F: FnMut(&DVector<T>) -> Result<(T, DVector<T>)>,
{
    let dim = start.len();
    let mut x = start;
    let mut m = DVector::zeros(dim);
    let mut v = DVector::zeros(dim);
    let mut lr = settings.lr;
    let mut history = Vec::with_capacity(settings.epochs);
    let mut best = x.clone();
    let mut best_loss = T::lit(f64::INFINITY);
    let mut plateau = Plateau {
        best: T::lit(f64::INFINITY),
        stale: 0,
    };
    let (b1, b2) = (settings.beta1, settings.beta2);
    let mut b1_pow = T::one();
    let mut b2_pow = T::one();

    for epoch in 0..=settings.epochs {
        let (loss, grad) = objective(&x)?;
        if !loss.is_finite_value() || grad.iter().any(|g| !g.is_finite_value()) {
            return Err(Error::NonFiniteLoss {
                stage: "adam",
                iteration: epoch,
                grad_norm: grad.norm().as_f64(),
            });
        }
        if loss < best_loss {
            best_loss = loss;
            best.copy_from(&x);
        }
        // The extra pass only scores the final iterate.
        if epoch == settings.epochs {
            break;
        }
        history.push(EpochRecord { loss, lr });

        if let Scheduler::PlateauHalving { patience, factor } = settings.scheduler {
            if loss < plateau.best - T::lit(PLATEAU_MIN_DELTA) {
                plateau.best = loss;
                plateau.stale = 0;
            } else {
                plateau.stale += 1;
                if plateau.stale >= patience.max(1) {
                    lr *= T::lit(factor);
                    plateau.stale = 0;
                }
            }
        }

        let g = if settings.clip_norm.is_finite_value() {
            clip_global_norm(&grad, settings.clip_norm)
        } else {
            grad
        };
        b1_pow *= b1;
        b2_pow *= b2;
        m = m * b1 + &g * (T::one() - b1);
        v = v * b2 + g.component_mul(&g) * (T::one() - b2);
        let step_size = lr / (T::one() - b1_pow);
        let v_corr = T::one() / (T::one() - b2_pow);
        for i in 0..dim {
            x[i] -= step_size * m[i] / ((v[i] * v_corr).sqrt() + settings.epsilon);
        }
    }

    Ok(AdamOutcome {
        best,
        best_loss,
        history,
    })
}
