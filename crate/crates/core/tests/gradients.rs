//! Analytic derivatives against central finite differences.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xtfc_hjb::numerics::finite_difference_gradient;
use xtfc_hjb::policy::{control_preimage, PolicyMode};
use xtfc_hjb::problem::{
    make_detumbling, make_double_integrator_with, make_nonlinear_benchmark_with, make_pendulum, DetumblingParams,
    PendulumParams, PlanarParams,
};
use xtfc_hjb::residual::{loss, loss_gradient_beta, TrainingSet};
use xtfc_hjb::{ElmParams, OcpInstance, ValueNetwork};

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-6;

/// Every benchmark, with control bounds so that the constrained modes apply.
fn bounded_benchmarks() -> Vec<OcpInstance> {
    let planar = PlanarParams {
        control_limit: Some(0.5),
        ..PlanarParams::default()
    };
    vec![
        make_double_integrator_with(&planar).unwrap(),
        make_nonlinear_benchmark_with(&planar).unwrap(),
        make_pendulum(&PendulumParams::default()).unwrap(),
        make_detumbling(&DetumblingParams {
            torque_limit: Some(0.3),
            ..DetumblingParams::default()
        })
        .unwrap(),
    ]
}

fn random_point(problem: &OcpInstance, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let d = problem.domain();
    DVector::from_fn(d.dim(), |i, _| rng.random_range(d.lower()[i]..d.upper()[i]))
}

fn relative_error(analytic: &DVector<f64>, numeric: &DVector<f64>) -> f64 {
    (analytic - numeric).norm() / analytic.norm().max(1e-12)
}

#[test]
fn value_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for problem in bounded_benchmarks() {
        let n = problem.state_dim();
        let mut worst: f64 = 0.0;
        for config in 0..100 {
            let elm = ElmParams::init(n, 24, config, 1.0).unwrap();
            let beta = DVector::from_fn(24, |_, _| rng.random_range(-1.0..1.0));
            let net = ValueNetwork::new(elm, beta).unwrap();
            let x = random_point(&problem, &mut rng);
            let fd = finite_difference_gradient(|y| net.value(y).unwrap(), &x, STEP);
            worst = worst.max(relative_error(&net.gradient(&x).unwrap(), &fd));
        }
        assert!(worst < TOL, "{}: worst relative error {worst:e}", problem.name());
    }
}

/// Drops points where some control component sits within `margin` of the
/// saturation kink, where the loss is not differentiable.
fn away_from_kinks(net: &ValueNetwork, problem: &OcpInstance, points: &DMatrix<f64>, margin: f64) -> DMatrix<f64> {
    let Some(bounds) = problem.bounds() else {
        return points.clone();
    };
    let alpha = bounds.alpha();
    let r = problem.control_cost().weight();
    let keep: Vec<usize> = (0..points.nrows())
        .filter(|&i| {
            let x = points.row(i).transpose();
            let w = control_preimage(&net.gradient(&x).unwrap(), &problem.input_map(&x)).unwrap();
            // constrained_paper saturates at |w| = α, constrained_clipped at |w| = 2Rα.
            (0..w.len()).all(|k| {
                let a = w[k].abs();
                (a - alpha[k]).abs() > margin && (a - 2.0 * r[(k, k)] * alpha[k]).abs() > margin
            })
        })
        .collect();
    points.select_rows(&keep)
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for problem in bounded_benchmarks() {
        let n = problem.state_dim();
        let elm = ElmParams::init(n, 16, 5, 1.0).unwrap();
        let raw = DMatrix::from_fn(48, n, |_, j| {
            let d = problem.domain();
            rng.random_range(d.lower()[j]..d.upper()[j])
        });
        for mode in PolicyMode::ALL {
            for config in 0..20 {
                let beta = DVector::from_fn(16, |_, _| rng.random_range(-2.0..2.0));
                let net = ValueNetwork::new(elm.clone(), beta.clone()).unwrap();
                let points = away_from_kinks(&net, &problem, &raw, 1e-3);
                assert!(points.nrows() > 0);
                let lambda = 1e-3;
                let analytic = loss_gradient_beta(&net, &problem, mode, &points, lambda).unwrap();
                let fd = finite_difference_gradient(
                    |b| loss(&net.with_beta(b.clone()).unwrap(), &problem, mode, &points, lambda).unwrap(),
                    &beta,
                    STEP,
                );
                let err = relative_error(&analytic, &fd);
                assert!(
                    err < TOL,
                    "{} {} config {config}: relative error {err:e}",
                    problem.name(),
                    mode.name()
                );

                let set = TrainingSet::new(&elm, &problem, &points).unwrap();
                let cached = set.evaluate(&beta, &problem, mode, lambda).unwrap().grad_beta;
                assert!(relative_error(&analytic, &cached) < 1e-10);
            }
        }
    }
}
