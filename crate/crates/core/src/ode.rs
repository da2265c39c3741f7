//! The Cauchy problem `dφ/dε = -[D²_φφ Φ]⁻¹ ∂ε∇_φ Φ`, `φ(0) = argmin Φ(·, 0)`,
//! integrated with classical RK4 on a uniform grid.

use std::time::Instant;

use crate::dual::{DualModel, GenericDual};
use crate::error::{Error, Result};
use crate::kernels::{model_for, EliminatedDual};
use crate::linalg::{inf_norm, SpdFactor};
use crate::problem::{Family, Problem};
use crate::sinkhorn::{sinkhorn_solve, SinkhornConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct OdeConfig {
    pub steps: usize,
    pub eps_max: f64,
    /// Number of evenly spaced coupling snapshots, endpoints included; 0 for none.
    pub snapshots: usize,
    /// One damped Newton step on `Φ(·, ε_k)` after every `k`-th step.
    pub polish_every: Option<usize>,
    /// Newton-correct the endpoint until `‖∇Φ‖∞` is at most this.
    pub endpoint_tol: Option<f64>,
    /// Integrate the generic objective instead of the family kernel.
    pub generic: bool,
    /// Required `‖∇Φ(φ₀, 0)‖∞`.
    pub init_tol: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            eps_max: 1.0,
            snapshots: 16,
            polish_every: None,
            endpoint_tol: None,
            generic: false,
            init_tol: 1e-10,
        }
    }
}

impl OdeConfig {
    pub fn with_steps(self, steps: usize) -> Self {
        Self { steps, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct CurveSample {
    pub eps: f64,
    /// Potentials in the gauge of the integrated model.
    pub potentials: Vec<f64>,
    /// The same potentials in the reduced generic gauge.
    pub phi: Vec<f64>,
    pub dual_value: f64,
    pub primal_value: f64,
    /// `c(ε)ᵀγ`, the primal value without its entropy term.
    pub transport_cost: f64,
    /// `‖Aᵀγ - b‖∞`, i.e. the generic stationarity residual.
    pub grad_inf_norm: f64,
    pub coupling: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SolutionCurve {
    pub model: &'static str,
    pub steps: usize,
    pub eps_max: f64,
    pub samples: Vec<CurveSample>,
    /// Linear solves that needed a diagonal jitter.
    pub jittered_solves: usize,
    pub total_solves: usize,
    /// Largest `‖Hx + ∂ε∇Φ‖∞ / ‖∂ε∇Φ‖∞` over all stages.
    pub max_solve_residual: f64,
    pub wall_ms: f64,
}

impl SolutionCurve {
    pub fn last(&self) -> &CurveSample {
        self.samples.last().expect("a curve has at least its initial sample")
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.eps).collect()
    }

    pub fn snapshots(&self) -> impl Iterator<Item = (usize, &CurveSample)> {
        self.samples.iter().enumerate().filter(|(_, s)| s.coupling.is_some())
    }
}

/// `φ₀` in the reduced generic gauge.
///
/// Zero for unconstrained problems with `c(0) = 0`; the closed form of the first
/// marginal's potential for free-marginal families; otherwise Sinkhorn at `ε = 0`.
pub fn initial_potential(problem: &Problem, init_tol: f64) -> Result<Vec<f64>> {
    let e = problem.system().dim();
    if problem.basis().is_empty() && !problem.has_free_marginals() && problem.cost().vanishes_at_zero() {
        return Ok(vec![0.0; e]);
    }
    if matches!(problem.family(), Family::Geodesic | Family::Barycenter) {
        let model = EliminatedDual::new(problem)?;
        let phi = model.to_generic(&vec![0.0; model.dim()], 0.0)?;
        let residual = inf_norm(&GenericDual::new(problem).gradient(&phi, 0.0)?);
        if residual <= init_tol {
            return Ok(phi);
        }
    }
    let config = SinkhornConfig::default().with_tol(init_tol);
    let result = sinkhorn_solve(problem, 0.0, &config, None)
        .map_err(|e| Error::InitialConditionFailed(e.to_string()))?;
    if !result.converged {
        return Err(Error::InitialConditionFailed(format!(
            "Sinkhorn residual {:.3e} after {} iterations",
            result.residual, result.iterations
        )));
    }
    Ok(result.potentials)
}

/// Solution of `H x = -∂ε∇Φ` at one point.
#[derive(Debug, Clone)]
pub struct Direction {
    pub dx: Vec<f64>,
    pub jittered: bool,
    pub residual: f64,
}

/// The ODE right-hand side `-H⁻¹ ∂ε∇Φ`.
pub fn rhs(model: &dyn DualModel, x: &[f64], eps: f64) -> Result<Direction> {
    let local = model.local(x, eps)?;
    let factor = SpdFactor::new(local.hessian).map_err(|_| Error::OdeStalled { eps })?;
    let minus: Vec<f64> = local.mixed.iter().map(|m| -m).collect();
    let dx = factor.solve(&minus);
    let scale = inf_norm(&minus);
    let residual = if scale > 0.0 {
        inf_norm(&factor.residual(&dx, &minus)) / scale
    } else {
        0.0
    };
    Ok(Direction {
        dx,
        jittered: factor.jitter() > 0.0,
        residual,
    })
}

/// One damped Newton step on `Φ(·, ε)` with backtracking.
pub fn polish(model: &dyn DualModel, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    let local = model.local(x, eps)?;
    let factor = SpdFactor::new(local.hessian).map_err(|_| Error::OdeStalled { eps })?;
    let minus: Vec<f64> = local.gradient.iter().map(|g| -g).collect();
    let dx = factor.solve(&minus);
    let slope: f64 = local.gradient.iter().zip(&dx).map(|(g, d)| g * d).sum();
    let mut step = 1.0;
    for _ in 0..40 {
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
        match model.value(&trial, eps) {
            Ok(v) if v <= local.value + 1e-4 * step * slope => return Ok(trial),
            _ => step *= 0.5,
        }
    }
    Ok(x.to_vec())
}

/// Newton iterations until `‖∇Φ‖∞ ≤ tol`.
pub fn newton_solve(model: &dyn DualModel, x0: &[f64], eps: f64, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    for _ in 0..max_iters {
        if inf_norm(&model.gradient(&x, eps)?) <= tol {
            return Ok(x);
        }
        let next = polish(model, &x, eps)?;
        if next == x {
            break;
        }
        x = next;
    }
    if inf_norm(&model.gradient(&x, eps)?) <= tol {
        Ok(x)
    } else {
        Err(Error::OdeStalled { eps })
    }
}

/// Snapshot step indices `round(k·steps/(n-1))`.
pub fn snapshot_indices(steps: usize, n: usize) -> Vec<usize> {
    match n {
        0 => Vec::new(),
        1 => vec![steps],
        _ => {
            let mut idx: Vec<usize> = (0..n)
                .map(|k| ((k * steps) as f64 / (n - 1) as f64).round() as usize)
                .collect();
            idx.dedup();
            idx
        }
    }
}

/// Integrates the problem's family kernel (or the generic objective) from `ε = 0`.
pub fn integrate(problem: &Problem, config: &OdeConfig) -> Result<SolutionCurve> {
    let model = model_for(problem, config.generic)?;
    integrate_model(model.as_ref(), config)
}

pub fn integrate_model(model: &dyn DualModel, config: &OdeConfig) -> Result<SolutionCurve> {
    if config.steps == 0 {
        return Err(Error::Unsupported("steps must be at least 1".into()));
    }
    let start = Instant::now();
    let problem = model.problem();
    let phi0 = initial_potential(problem, config.init_tol)?;
    let mut x = model.from_generic(&phi0, 0.0)?;
    let h = config.eps_max / config.steps as f64;
    let snaps = snapshot_indices(config.steps, config.snapshots);

    let mut curve = SolutionCurve {
        model: model.name(),
        steps: config.steps,
        eps_max: config.eps_max,
        samples: Vec::with_capacity(config.steps + 1),
        jittered_solves: 0,
        total_solves: 0,
        max_solve_residual: 0.0,
        wall_ms: 0.0,
    };
    curve.samples.push(sample(model, &x, 0.0, snaps.contains(&0))?);

    for k in 0..config.steps {
        let eps = k as f64 * h;
        let mut stage = |y: &[f64], at: f64| -> Result<Vec<f64>> {
            let d = rhs(model, y, at)?;
            curve.total_solves += 1;
            curve.jittered_solves += usize::from(d.jittered);
            curve.max_solve_residual = curve.max_solve_residual.max(d.residual);
            Ok(d.dx)
        };
        let k1 = stage(&x, eps)?;
        let k2 = stage(&axpy(&x, 0.5 * h, &k1), eps + 0.5 * h)?;
        let k3 = stage(&axpy(&x, 0.5 * h, &k2), eps + 0.5 * h)?;
        let k4 = stage(&axpy(&x, h, &k3), eps + h)?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let next = if k + 1 == config.steps { config.eps_max } else { (k + 1) as f64 * h };
        if let Some(every) = config.polish_every {
            if every > 0 && (k + 1) % every == 0 {
                x = polish(model, &x, next)?;
            }
        }
        curve.samples.push(sample(model, &x, next, snaps.contains(&(k + 1)))?);
    }
    if let Some(tol) = config.endpoint_tol {
        if config.steps > 0 {
            x = newton_solve(model, &x, config.eps_max, tol, 20)?;
            let keep = curve.last().coupling.is_some();
            *curve.samples.last_mut().expect("nonempty") = sample(model, &x, config.eps_max, keep)?;
        }
    }
    curve.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(curve)
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

fn sample(model: &dyn DualModel, x: &[f64], eps: f64, keep_coupling: bool) -> Result<CurveSample> {
    let problem = model.problem();
    let phi = model.to_generic(x, eps)?;
    let gamma = model.coupling(x, eps)?;
    let cost = problem.cost().value(eps);
    Ok(CurveSample {
        transport_cost: gamma.iter().zip(&cost).map(|(g, c)| g * c).sum(),
        eps,
        potentials: x.to_vec(),
        dual_value: model.value(x, eps)?,
        primal_value: problem.primal_value(&gamma, eps),
        grad_inf_norm: inf_norm(&problem.system().residual(&gamma)),
        coupling: keep_coupling.then_some(gamma),
        phi,
    })
}
