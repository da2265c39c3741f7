mod common;

use common::*;
use eot_ode::derivatives::{
    c_prime, c_prime_zero, c_second_along_curve, c_second_finite_difference, c_second_generic, c_second_zero,
    c_value_sinkhorn, report_along_curve, sherman_morrison_direction,
};
use eot_ode::families::{cost_table, make_two_marginal, random_marginal};
use eot_ode::kernels::TwoMarginalKernel;
use eot_ode::ode::{integrate, OdeConfig};
use eot_ode::problem::DiscreteMarginal;
use eot_ode::sinkhorn::{sinkhorn_solve, SinkhornConfig};
use eot_ode::{DualModel, Error, GenericDual, Problem};
use nalgebra::DVector;

const TIGHT: f64 = 1e-13;

/// `E[c]` under `μ ⊗ ν`, by a double loop.
fn expected_cost(p: &Problem) -> f64 {
    let mu = p.marginals()[0].weights();
    let nu = p.marginals()[1].weights();
    let c = p.cost().derivative(0.0);
    let mut total = 0.0;
    for (r, m) in mu.iter().enumerate() {
        for (s, n) in nu.iter().enumerate() {
            total += m * n * c[r * nu.len() + s];
        }
    }
    total
}

fn table1_small() -> Problem {
    let mu = DiscreteMarginal::uniform_grid(0.0, 1.0, 20).unwrap();
    let cost = cost_table(&[mu.clone(), mu.clone()], |p| (p[1][0] - p[0][0]).powi(2));
    make_two_marginal(mu.clone(), mu, cost, 0.05).unwrap()
}

#[test]
fn slope_at_zero_is_minus_mean_cost() {
    for seed in 0..10 {
        let p = two_marginal(&mut rng(seed), 5, 6, 0.3);
        let got = c_prime_zero(&p).unwrap();
        assert!((got + expected_cost(&p)).abs() < 1e-14);
        let (_, sinkhorn) = c_value_sinkhorn(&p, 0.0, TIGHT).unwrap();
        assert!((got - sinkhorn).abs() < 1e-12);
    }
}

#[test]
fn envelope_slope_matches_central_difference() {
    let p = table1_small();
    let h = 1e-4;
    let (_, slope) = c_value_sinkhorn(&p, 1.0, TIGHT).unwrap();
    let up = c_value_sinkhorn(&p, 1.0 + h, TIGHT).unwrap().0;
    let down = c_value_sinkhorn(&p, 1.0 - h, TIGHT).unwrap().0;
    let fd = (up - down) / (2.0 * h);
    assert!((slope - fd).abs() <= 1e-4 * fd.abs(), "{slope} vs {fd}");
}

#[test]
fn envelope_requires_a_stationary_point() {
    let p = two_marginal(&mut rng(1), 3, 3, 0.5);
    let model = GenericDual::new(&p);
    let x = vec![0.3; model.dim()];
    assert!(matches!(c_prime(&model, &x, 0.5), Err(Error::EnvelopePrecondition { .. })));
}

#[test]
fn along_curve_agrees_with_closed_form_at_zero() {
    for seed in 0..10 {
        let p = two_marginal(&mut rng(seed), 4, 5, 0.2 + 0.1 * seed as f64);
        let kernel = TwoMarginalKernel::new(&p).unwrap();
        let u = vec![0.0; kernel.dim()];
        let along = c_second_along_curve(&p, &u, 0.0).unwrap();
        let closed = c_second_zero(&p).unwrap();
        assert!((along - closed).abs() <= 1e-10 * closed.abs().max(1e-3), "{along} vs {closed}");
    }
}

#[test]
fn along_curve_matches_difference_of_slopes() {
    let p = two_marginal(&mut rng(3), 5, 4, 0.5);
    let report = report_along_curve(&p, 0.5, TIGHT).unwrap();
    let h = 1e-4;
    let up = c_value_sinkhorn(&p, 0.5 + h, TIGHT).unwrap().1;
    let down = c_value_sinkhorn(&p, 0.5 - h, TIGHT).unwrap().1;
    let fd = (up - down) / (2.0 * h);
    assert!((report.c_second - fd).abs() <= 1e-4 * fd.abs(), "{} vs {fd}", report.c_second);
}

#[test]
fn constant_cost_has_no_curvature() {
    let mut r = rng(4);
    let mu = random_marginal(&mut r, 4).unwrap();
    let nu = random_marginal(&mut r, 3).unwrap();
    let p = make_two_marginal(mu, nu, vec![0.7; 12], 0.3).unwrap();
    assert!(c_second_zero(&p).unwrap().abs() < 1e-14);
    for eps in [0.2, 1.0] {
        let res = sinkhorn_solve(&p, eps, &SinkhornConfig::default().with_tol(TIGHT), None).unwrap();
        let u = TwoMarginalKernel::new(&p).unwrap().from_generic(&res.potentials, eps).unwrap();
        assert!(c_second_along_curve(&p, &u, eps).unwrap().abs() < 1e-12);
    }
}

#[test]
fn separable_cost_has_no_curvature_at_zero() {
    let mut r = rng(5);
    let mu = random_marginal(&mut r, 5).unwrap();
    let nu = random_marginal(&mut r, 4).unwrap();
    let cost = cost_table(&[mu.clone(), nu.clone()], |p| p[0][0].sin() + 3.0 * p[1][0] * p[1][0]);
    let p = make_two_marginal(mu, nu, cost, 0.2).unwrap();
    assert!(c_second_zero(&p).unwrap().abs() < 1e-12);
}

#[test]
fn sherman_morrison_matches_dense_solve() {
    for seed in 0..10 {
        let p = two_marginal(&mut rng(seed), 5, 4, 0.4);
        let kernel = TwoMarginalKernel::new(&p).unwrap();
        let zero = vec![0.0; kernel.dim()];
        let local = kernel.local(&zero, 0.0).unwrap();
        // [-H]⁻¹ mixed
        let dense = (-local.hessian).lu().solve(&DVector::from_column_slice(&local.mixed)).unwrap();
        let sm = sherman_morrison_direction(&p).unwrap();
        assert!(rel(&sm, dense.as_slice(), 1e-300) < 1e-10);
    }
}

#[test]
fn mixed_gradient_at_zero_is_centered_conditional_cost() {
    let p = two_marginal(&mut rng(6), 4, 5, 0.3);
    let kernel = TwoMarginalKernel::new(&p).unwrap();
    let mixed = kernel.mixed(&vec![0.0; kernel.dim()], 0.0).unwrap();
    let mu = p.marginals()[0].weights();
    let nu = p.marginals()[1].weights();
    let c = p.cost().derivative(0.0);
    let mean = expected_cost(&p);
    for (j, m) in mixed.iter().enumerate() {
        let r = j + 1;
        let cond: f64 = (0..nu.len()).map(|s| nu[s] * c[r * nu.len() + s]).sum();
        let want = mu[r] / 0.3 * (mean - cond);
        assert!((m - want).abs() < 1e-13, "{m} vs {want}");
    }
}

#[test]
fn curvature_is_nonnegative_along_curves() {
    // C = -P is convex, so C'' >= 0 up to round-off
    for p in [two_marginal(&mut rng(7), 5, 5, 0.1), martingale(&mut rng(8), 4, 6, 0.2), three_marginal(&mut rng(9), [3, 3, 3], 0.3)] {
        for eps in [0.0, 0.25, 0.5, 1.0] {
            let res = sinkhorn_solve(&p, eps, &SinkhornConfig::default().with_tol(TIGHT), None).unwrap();
            let c2 = c_second_generic(&p, &res.potentials, eps).unwrap();
            assert!(c2 >= -1e-8, "{} at {eps}: {c2}", p.family().name());
        }
    }
}

#[test]
fn envelope_identity_holds_along_every_family() {
    let mut r = rng(10);
    let problems = [
        two_marginal(&mut r, 5, 4, 0.2),
        three_marginal(&mut r, [3, 4, 3], 0.3),
        martingale(&mut r, 4, 7, 0.2),
        multi_period(&mut r, [2, 3, 5], 0.3),
        geodesic(&mut r, 4, 6, 0.1),
        barycenter(&mut r, 3, 5, 0.2),
    ];
    for p in &problems {
        let curve = integrate(p, &OdeConfig { steps: 20, snapshots: 3, polish_every: Some(1), ..OdeConfig::default() })
            .unwrap();
        for s in curve.samples.iter().step_by(5) {
            let model = GenericDual::new(p);
            let gamma = model.coupling(&s.phi, s.eps).unwrap();
            let want = -p.cost().derivative(s.eps).iter().zip(&gamma).map(|(c, g)| c * g).sum::<f64>();
            let res = sinkhorn_solve(p, s.eps, &SinkhornConfig::default().with_tol(TIGHT), Some(&s.phi)).unwrap();
            let got = c_prime(&model, &res.potentials, s.eps).unwrap();
            assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-6), "{} at {}: {got} vs {want}", p.family().name(), s.eps);
        }
    }
}

#[test]
fn short_forward_stencil_is_not_accurate_enough() {
    // small η makes the third derivative large enough to spoil the O(h) stencil
    let p = two_marginal(&mut rng(106), 3, 4, 0.1);
    let h = 1e-2;
    let exact = c_second_zero(&p).unwrap();
    let c: Vec<f64> = (0..3).map(|i| c_value_sinkhorn(&p, i as f64 * h, TIGHT).unwrap().0).collect();
    let three_point = (c[0] - 2.0 * c[1] + c[2]) / (h * h);
    let six_point = c_second_finite_difference(&p, 0.0, h, TIGHT).unwrap();
    let short_err = ((three_point - exact) / exact).abs();
    let long_err = ((six_point - exact) / exact).abs();
    println!("three-point rel err {short_err:.3e}, six-point rel err {long_err:.3e}");
    assert!(short_err > 1e-3);
    assert!(long_err < 1e-4);
}
