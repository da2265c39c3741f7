mod common;

use common::*;
use eot_ode::kernels::{model_for, EliminatedDual};
use eot_ode::problem::Family;
use eot_ode::{DualModel, GenericDual, Problem};

fn instances(seed: u64) -> Vec<Problem> {
    let mut r = rng(seed);
    vec![
        two_marginal(&mut r, 4, 3, 0.5),
        three_marginal(&mut r, [3, 2, 4], 0.7),
        martingale(&mut r, 3, 5, 0.4),
        multi_period(&mut r, [2, 3, 4], 0.6),
        geodesic(&mut r, 3, 4, 0.3),
        barycenter(&mut r, 2, 3, 0.5),
    ]
}

fn check_calculus(model: &dyn DualModel, x: &[f64], eps: f64) {
    let local = model.local(x, eps).unwrap();
    assert!((local.value - model.value(x, eps).unwrap()).abs() < 1e-14);
    assert!(rel(&local.gradient, &model.gradient(x, eps).unwrap(), 1e-300) < 1e-14);
    assert!(rel(local.hessian.as_slice(), local.hessian.transpose().as_slice(), 1e-300) < 1e-14);
    let err = calculus_errors(model, x, eps);
    assert!(err.gradient < 1e-6, "{} gradient: {}", model.name(), err.gradient);
    assert!(err.hessian < 1e-5, "{} hessian: {}", model.name(), err.hessian);
    assert!(err.mixed < 1e-6, "{} mixed: {}", model.name(), err.mixed);
}

#[test]
fn kernels_match_finite_differences() {
    for seed in 0..5 {
        for problem in instances(seed) {
            let mut r = rng(100 + seed);
            for generic in [false, true] {
                let model = model_for(&problem, generic).unwrap();
                let x = random_point(&mut r, model.dim(), 0.3);
                check_calculus(model.as_ref(), &x, 0.4);
            }
        }
    }
}

#[test]
fn eliminated_dual_matches_finite_differences_on_constrained_families() {
    for problem in instances(7) {
        let model = EliminatedDual::new(&problem).unwrap();
        let x = random_point(&mut rng(3), model.dim(), 0.3);
        check_calculus(&model, &x, 0.6);
    }
}

#[test]
fn closed_form_hessians_equal_contracted_generic_hessians() {
    for seed in 0..5 {
        for problem in instances(seed) {
            let model = model_for(&problem, false).unwrap();
            let eps = 0.3 + 0.1 * seed as f64;
            let x = random_point(&mut rng(seed + 50), model.dim(), 0.4);
            let (hessian, mixed) = contraction_errors(&problem, model.as_ref(), &x, eps);
            assert!(hessian < 1e-8, "{}: contracted hessian rel err {hessian}", model.name());
            assert!(mixed < 1e-8, "{}: contracted mixed rel err {mixed}", model.name());
        }
    }
}

#[test]
fn eliminated_block_is_stationary() {
    for problem in instances(11) {
        let model = model_for(&problem, false).unwrap();
        let x = random_point(&mut rng(5), model.dim(), 0.3);
        let phi = model.to_generic(&x, 0.5).unwrap();
        // the generic gradient vanishes on the eliminated block's columns
        let g = GenericDual::new(&problem).gradient(&phi, 0.5).unwrap();
        let sys = problem.system();
        let elim_marginal = match problem.family() {
            Family::TwoMarginal => 1,
            Family::ThreeMarginal => 2,
            _ => 0,
        };
        for (k, label) in sys.labels().iter().enumerate() {
            if let eot_ode::problem::ColumnLabel::Marginal { marginal, .. } = label {
                if *marginal == elim_marginal {
                    assert!(g[k].abs() < 1e-10, "{}: residual {}", model.name(), g[k]);
                }
            }
        }
        // values agree between the kernel and the generic objective
        let generic = GenericDual::new(&problem).value(&phi, 0.5).unwrap();
        assert!((generic - model.value(&x, 0.5).unwrap()).abs() < 1e-12);
        let back = model.from_generic(&phi, 0.5).unwrap();
        assert!(rel(&back, &x, 1e-12) < 1e-10, "{} gauge round trip", model.name());
    }
}

#[test]
fn couplings_agree_between_kernel_and_generic() {
    for problem in instances(13) {
        let model = model_for(&problem, false).unwrap();
        let x = random_point(&mut rng(9), model.dim(), 0.3);
        let phi = model.to_generic(&x, 0.2).unwrap();
        let a = model.coupling(&x, 0.2).unwrap();
        let b = GenericDual::new(&problem).coupling(&phi, 0.2).unwrap();
        assert!(total_variation(&a, &b) < 1e-12, "{}", model.name());
    }
}
