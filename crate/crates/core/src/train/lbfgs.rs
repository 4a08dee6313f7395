use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsSettings<T: Real> {
    pub max_iters: usize,
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: T,
    /// Curvature constant.
    pub c2: T,
    pub max_line_evals: usize,
    /// Stop once `‖g‖∞` falls to this value.
    pub grad_tol: T,
}

impl<T: Real> LbfgsSettings<T> {
    pub fn new(max_iters: usize, memory: usize) -> Self {
        Self {
            max_iters,
            memory: memory.max(1),
            c1: T::lit(1e-4),
            c2: T::lit(0.9),
            max_line_evals: 30,
            grad_tol: T::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    /// Gradient reached `grad_tol` (including a stationary start).
    Converged,
    MaxIterations,
    /// No step satisfying the strong Wolfe conditions was found.
    LineSearchFailed,
    /// The accepted step no longer changed the loss.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome<T: Real> {
    pub best: DVector<T>,
    pub best_loss: T,
    /// Loss after each accepted iteration.
    pub history: Vec<T>,
    pub iterations: usize,
    pub status: LbfgsStatus,
}

struct Probe<T: Real> {
    step: T,
    loss: T,
    grad: DVector<T>,
    slope: T,
}

fn cubic_minimizer<T: Real>(a: &Probe<T>, b: &Probe<T>) -> Option<T> {
    let d1 = a.slope + b.slope - T::lit(3.0) * (a.loss - b.loss) / (a.step - b.step);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < T::zero() {
        return None;
    }
    let d2 = disc.sqrt() * (b.step - a.step).signum();
    let denom = b.slope - a.slope + d2 + d2;
    if denom == T::zero() {
        return None;
    }
    let t = b.step - (b.step - a.step) * (b.slope + d2 - d1) / denom;
    t.is_finite_value().then_some(t)
}

/// Strong-Wolfe line search along `dir` (bracketing then zoom with cubic
/// interpolation). Returns `None` when no acceptable step is found.
fn strong_wolfe<T: Real, F>(
    objective: &mut F,
    x: &DVector<T>,
    dir: &DVector<T>,
    f0: T,
    slope0: T,
    initial_step: T,
    settings: &LbfgsSettings<T>,
) -> Result<Option<Probe<T>>>
where
    F: FnMut(&DVector<T>) -> Result<(T, DVector<T>)>,
{
    let mut evals = 0;
    let mut probe = |step: T, evals: &mut usize| -> Result<Probe<T>> {
        *evals += 1;
        let (loss, grad) = objective(&(x + dir * step))?;
        let slope = grad.dot(dir);
        Ok(Probe { step, loss, grad, slope })
    };
    let armijo = |p: &Probe<T>| p.loss.is_finite_value() && p.loss <= f0 + settings.c1 * p.step * slope0;
    let curvature = |p: &Probe<T>| p.slope.abs() <= -settings.c2 * slope0;

    let mut prev = Probe {
        step: T::zero(),
        loss: f0,
        grad: DVector::zeros(0),
        slope: slope0,
    };
    let mut step = initial_step;
    let (mut lo, mut hi);
    loop {
        if evals >= settings.max_line_evals {
            return Ok(None);
        }
        let cur = probe(step, &mut evals)?;
        if !armijo(&cur) || (evals > 1 && cur.loss >= prev.loss) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.slope >= T::zero() {
            lo = cur;
            hi = prev;
            break;
        }
        step = cur.step * T::lit(2.0);
        prev = cur;
    }

    // Zoom: `lo` satisfies Armijo with the lowest loss so far.
    while evals < settings.max_line_evals {
        let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
        let width = b - a;
        if width <= T::lit(1e-16) * b.max(T::one()) {
            break;
        }
        let guess = if hi.loss.is_finite_value() {
            cubic_minimizer(&lo, &hi)
        } else {
            None
        };
        let margin = width * T::lit(0.1);
        let trial = match guess {
            Some(t) if t > a + margin && t < b - margin => t,
            _ => (lo.step + hi.step) * T::lit(0.5),
        };
        let cur = probe(trial, &mut evals)?;
        if !armijo(&cur) || cur.loss >= lo.loss {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.slope * (hi.step - lo.step) >= T::zero() {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Out of evaluations: accept a sufficient-decrease point if one exists.
    Ok((lo.step > T::zero() && lo.loss < f0).then_some(lo))
}

/// Limited-memory BFGS with two-loop recursion and strong-Wolfe steps.
pub fn lbfgs<T: Real, F>(mut objective: F, start: DVector<T>, settings: &LbfgsSettings<T>) -> Result<LbfgsOutcome<T>>
where
    F: FnMut(&DVector<T>) -> Result<(T, DVector<T>)>,
{
    let mut x = start;
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite_value() || g.iter().any(|v| !v.is_finite_value()) {
        return Err(Error::NonFiniteLoss {
            stage: "lbfgs",
            iteration: 0,
            grad_norm: g.norm().as_f64(),
        });
    }
    let mut pairs: VecDeque<(DVector<T>, DVector<T>, T)> = VecDeque::with_capacity(settings.memory);
    let mut history = Vec::new();
    let mut status = LbfgsStatus::MaxIterations;
    let mut iterations = 0;

    for iter in 0..settings.max_iters {
        if g.amax() <= settings.grad_tol {
            status = LbfgsStatus::Converged;
            break;
        }
        let mut dir = two_loop(&g, &pairs);
        let mut slope = g.dot(&dir);
        if !(slope < T::zero()) {
            pairs.clear();
            dir = -&g;
            slope = g.dot(&dir);
        }
        let initial = if pairs.is_empty() {
            T::one().min(T::one() / g.norm())
        } else {
            T::one()
        };
        let Some(accepted) = strong_wolfe(&mut objective, &x, &dir, f, slope, initial, settings)? else {
            log::warn!("L-BFGS line search failed at iteration {iter}; keeping the best iterate");
            status = LbfgsStatus::LineSearchFailed;
            break;
        };
        let s = &dir * accepted.step;
        let y = &accepted.grad - &g;
        let sy = s.dot(&y);
        if sy > T::lit(1e-12) * s.norm() * y.norm() {
            if pairs.len() == settings.memory {
                pairs.pop_front();
            }
            pairs.push_back((s.clone(), y, T::one() / sy));
        }
        x += &s;
        let previous = f;
        f = accepted.loss;
        g = accepted.grad;
        iterations = iter + 1;
        history.push(f);
        if previous - f <= T::lit(f64::EPSILON) * f.abs() {
            status = LbfgsStatus::Stalled;
            break;
        }
    }
    if status == LbfgsStatus::MaxIterations && g.amax() <= settings.grad_tol {
        status = LbfgsStatus::Converged;
    }
    Ok(LbfgsOutcome {
        best: x,
        best_loss: f,
        history,
        iterations,
        status,
    })
}

fn two_loop<T: Real>(g: &DVector<T>, pairs: &VecDeque<(DVector<T>, DVector<T>, T)>) -> DVector<T> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = *rho * s.dot(&q);
        q.axpy(-a, y, T::one());
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * y.dot(&q);
        q.axpy(a - b, s, T::one());
    }
    -q
}
