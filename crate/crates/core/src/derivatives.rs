//! Derivatives of the optimal value `C(ε) = inf Φ(·, ε) = -P(ε)`.
//!
//! `C'` follows from the envelope identity, `C''` from differentiating once more and
//! eliminating `dφ/dε` with the ODE. At `ε = 0` the two-marginal case has a closed form.

use serde::Serialize;

use crate::dual::{DualModel, GenericDual};
use crate::error::{Error, Result};
use crate::kernels::TwoMarginalKernel;
use crate::linalg::{inf_norm, SpdFactor};
use crate::problem::{Family, Problem};
use crate::sinkhorn::{sinkhorn_solve, SinkhornConfig};

/// Stationarity required before the envelope identity is applied.
pub const ENVELOPE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedFormZero,
    AlongCurve,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub eps: f64,
    pub c_value: f64,
    pub c_prime: f64,
    pub c_second: f64,
    pub method: Method,
}

fn check_stationary(model: &dyn DualModel, x: &[f64], eps: f64) -> Result<()> {
    let residual = inf_norm(&model.gradient(x, eps)?);
    if residual > ENVELOPE_TOL {
        return Err(Error::EnvelopePrecondition { residual });
    }
    Ok(())
}

/// `C'(ε) = ∂εΦ` at a minimizer, i.e. `-c'(ε)ᵀγ(ε)`.
pub fn c_prime(model: &dyn DualModel, x: &[f64], eps: f64) -> Result<f64> {
    check_stationary(model, x, eps)?;
    model.eps_partial(x, eps)
}

/// `C'(0) = -E[c'(0)]` under the reference product measure.
pub fn c_prime_zero(problem: &Problem) -> Result<f64> {
    if !problem.basis().is_empty() || problem.has_free_marginals() || !problem.cost().vanishes_at_zero() {
        return Err(Error::ClosedFormUnsupported);
    }
    let dc = problem.cost().derivative(0.0);
    Ok(-dc
        .iter()
        .zip(problem.log_reference())
        .map(|(c, l)| c * l.exp())
        .sum::<f64>())
}

/// Moments of the cost slope under `μ ⊗ ν` for the two-marginal closed forms.
fn two_marginal_slope(problem: &Problem) -> Result<(&[f64], &[f64], &[f64])> {
    if problem.family() != Family::TwoMarginal || !problem.cost().vanishes_at_zero() {
        return Err(Error::ClosedFormUnsupported);
    }
    let slope = problem.cost().affine_slope().ok_or(Error::ClosedFormUnsupported)?;
    Ok((problem.marginals()[0].weights(), problem.marginals()[1].weights(), slope))
}

/// `C''(0) = (1/η)(E[c]² + E[c²] - E[E[c|X]²] - E[E[c|Y]²])`.
pub fn c_second_zero(problem: &Problem) -> Result<f64> {
    let (mu, nu, c) = two_marginal_slope(problem)?;
    let k = nu.len();
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut by_x = 0.0;
    let mut col = vec![0.0; k];
    for (r, &m) in mu.iter().enumerate() {
        let row = &c[r * k..(r + 1) * k];
        let cond: f64 = row.iter().zip(nu).map(|(v, w)| v * w).sum();
        by_x += m * cond * cond;
        mean += m * cond;
        second += m * row.iter().zip(nu).map(|(v, w)| v * v * w).sum::<f64>();
        for s in 0..k {
            col[s] += m * row[s];
        }
    }
    let by_y: f64 = col.iter().zip(nu).map(|(v, w)| w * v * v).sum();
    Ok((mean * mean + second - by_x - by_y) / problem.eta())
}

/// `[-D²Φ̄]⁻¹ ∇_u ∂εΦ̄` at `(u, ε) = (0, 0)` in the `u₀ = 0` gauge.
///
/// There the Hessian is `(1/η)(Diag(μ') - μ'μ'ᵀ)` with `μ' = (μ_1, …)`, and
/// Sherman–Morrison gives its inverse as `η(Diag(μ')⁻¹ + 11ᵀ/μ_0)`.
pub fn sherman_morrison_direction(problem: &Problem) -> Result<Vec<f64>> {
    let (mu, _, _) = two_marginal_slope(problem)?;
    let kernel = TwoMarginalKernel::new(problem)?;
    let mixed = kernel.mixed(&vec![0.0; kernel.dim()], 0.0)?;
    let total: f64 = mixed.iter().sum();
    let eta = problem.eta();
    Ok(mixed
        .iter()
        .zip(&mu[1..])
        .map(|(g, m)| -eta * (g / m + total / mu[0]))
        .collect())
}

fn second_from_local(model: &dyn DualModel, x: &[f64], eps: f64, eps_second: f64) -> Result<f64> {
    let local = model.local(x, eps)?;
    let factor = SpdFactor::new(local.hessian)?;
    let solved = factor.solve(&local.mixed);
    let quad: f64 = local.mixed.iter().zip(&solved).map(|(a, b)| a * b).sum();
    Ok(eps_second - quad)
}

/// `C''(ε) = ∂²εΦ̄ - (∇_u∂εΦ̄)ᵀ[D²_uuΦ̄]⁻¹(∇_u∂εΦ̄)` with the two-marginal kernel.
pub fn c_second_along_curve(problem: &Problem, u: &[f64], eps: f64) -> Result<f64> {
    let kernel = TwoMarginalKernel::new(problem)?;
    check_stationary(&kernel, u, eps)?;
    let eps_second = kernel.eps_second_partial(u, eps)?;
    second_from_local(&kernel, u, eps, eps_second)
}

/// `C''(ε)` from the generic objective at stationary reduced potentials, any family.
pub fn c_second_generic(problem: &Problem, phi: &[f64], eps: f64) -> Result<f64> {
    let model = GenericDual::new(problem);
    check_stationary(&model, phi, eps)?;
    if problem.cost().affine_slope().is_none() {
        return Err(Error::Unsupported("second ε-derivative needs an affine cost path".into()));
    }
    let gamma = model.coupling(phi, eps)?;
    let dc = problem.cost().derivative(eps);
    let eps_second = gamma.iter().zip(&dc).map(|(g, c)| g * c * c).sum::<f64>() / problem.eta();
    second_from_local(&model, phi, eps, eps_second)
}

/// `C(ε)` and `C'(ε)` from a Sinkhorn solve at tolerance `tol`.
pub fn c_value_sinkhorn(problem: &Problem, eps: f64, tol: f64) -> Result<(f64, f64)> {
    let config = SinkhornConfig::default().with_tol(tol);
    let result = sinkhorn_solve(problem, eps, &config, None)?;
    if !result.converged {
        return Err(Error::EnvelopePrecondition { residual: result.residual });
    }
    let model = GenericDual::new(problem);
    let slope = model.eps_partial(&result.potentials, eps)?;
    Ok((result.value - problem.eta(), slope))
}

/// Second derivative at `values[0]` from six equally spaced forward samples, `O(h⁴)`.
pub fn forward_second_difference(values: &[f64; 6], h: f64) -> f64 {
    const W: [f64; 6] = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
    W.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / (12.0 * h * h)
}

/// `C''(ε)` from Sinkhorn values of `C` on the forward stencil `ε, ε + h, …, ε + 5h`.
pub fn c_second_finite_difference(problem: &Problem, eps: f64, h: f64, tol: f64) -> Result<f64> {
    let mut values = [0.0; 6];
    for (i, v) in values.iter_mut().enumerate() {
        *v = c_value_sinkhorn(problem, eps + i as f64 * h, tol)?.0;
    }
    Ok(forward_second_difference(&values, h))
}

/// `C^(order)(ε)` by forward differences of Sinkhorn-computed `C'`, first-order accurate.
pub fn higher_derivative_fd(problem: &Problem, eps: f64, order: usize, h: f64, tol: f64) -> Result<f64> {
    if order == 0 {
        return Ok(c_value_sinkhorn(problem, eps, tol)?.0);
    }
    let k = order - 1;
    let mut total = 0.0;
    let mut binom = 1.0;
    for j in 0..=k {
        let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * binom * c_value_sinkhorn(problem, eps + j as f64 * h, tol)?.1;
        binom = binom * (k - j) as f64 / (j + 1) as f64;
    }
    Ok(total / h.powi(k as i32))
}

/// Report at `ε = 0` from the closed forms.
pub fn report_zero(problem: &Problem) -> Result<DerivativeReport> {
    Ok(DerivativeReport {
        eps: 0.0,
        c_value: 0.0,
        c_prime: c_prime_zero(problem)?,
        c_second: c_second_zero(problem)?,
        method: Method::ClosedFormZero,
    })
}

/// Report at `ε` from a tight Sinkhorn solve followed by the along-curve formulas.
pub fn report_along_curve(problem: &Problem, eps: f64, tol: f64) -> Result<DerivativeReport> {
    let result = sinkhorn_solve(problem, eps, &SinkhornConfig::default().with_tol(tol), None)?;
    let model = GenericDual::new(problem);
    let phi = &result.potentials;
    let c_second = if problem.family() == Family::TwoMarginal {
        let kernel = TwoMarginalKernel::new(problem)?;
        let u = kernel.from_generic(phi, eps)?;
        c_second_along_curve(problem, &u, eps)?
    } else {
        c_second_generic(problem, phi, eps)?
    };
    Ok(DerivativeReport {
        eps,
        c_value: result.value - problem.eta(),
        c_prime: c_prime(&model, phi, eps)?,
        c_second,
        method: Method::AlongCurve,
    })
}

/// Report at `ε` from Sinkhorn values alone.
pub fn report_finite_difference(problem: &Problem, eps: f64, h: f64, tol: f64) -> Result<DerivativeReport> {
    let (c_value, c_prime) = c_value_sinkhorn(problem, eps, tol)?;
    Ok(DerivativeReport {
        eps,
        c_value,
        c_prime,
        c_second: c_second_finite_difference(problem, eps, h, tol)?,
        method: Method::FiniteDifference,
    })
}
