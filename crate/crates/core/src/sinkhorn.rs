//! Generalized Sinkhorn: cyclic exact minimization of the dual over potential blocks.
//!
//! Marginal blocks have closed-form updates. Each extra constraint column is a scalar
//! root problem solved by safeguarded Newton with a bisection fallback. The sweep runs
//! over every column of the unreduced system and the result is folded into the
//! reduced gauge at the end.

use crate::dual::phi_value;
use crate::error::{Error, Result};
use crate::linalg::inf_norm;
use crate::problem::{build_system, ColumnLabel, LinearSystem, Problem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub max_iters: usize,
    /// Stop when `‖Aᵀγ - b‖∞ ≤ tol` for the recovered coupling.
    pub tol: f64,
    /// Stop a scalar root search when the log-ratio of the two one-signed sums is below this.
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Fraction of each exact block step that is applied.
    pub damping: f64,
    /// Evaluate `Φ` after every block update and count increases.
    pub check_descent: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            tol: 1e-8,
            newton_tol: 1e-13,
            newton_max: 50,
            damping: 1.0,
            check_descent: false,
        }
    }
}

impl SinkhornConfig {
    pub fn with_tol(self, tol: f64) -> Self {
        Self { tol, ..self }
    }

    pub fn with_max_iters(self, max_iters: usize) -> Self {
        Self { max_iters, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 || !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Unsupported(format!("invalid Sinkhorn configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// Potentials in the gauge of the reduced generic system.
    pub potentials: Vec<f64>,
    pub iterations: usize,
    /// Final `‖Aᵀγ - b‖∞`.
    pub residual: f64,
    pub converged: bool,
    /// `Φ` at the returned potentials.
    pub value: f64,
    /// Block updates that increased `Φ` by more than rounding (only with `check_descent`).
    pub descent_violations: usize,
}

impl SinkhornResult {
    /// Regularized primal value of the recovered coupling at the optimum, `η - Φ`.
    pub fn primal_value(&self, eta: f64) -> f64 {
        eta - self.value
    }
}

/// Where a column block lives on the grid.
enum Block {
    Marginal { offset: usize, axis: usize, weights: Vec<f64> },
    Constraint { column: usize, indices: Vec<usize>, values: Vec<f64> },
}

struct State<'a> {
    problem: &'a Problem,
    parent: LinearSystem,
    phi: Vec<f64>,
    /// `(A_ℓφ - c_ℓ)/η + log 𝛍_ℓ`.
    logw: Vec<f64>,
    eta: f64,
}

impl State<'_> {
    fn objective(&self) -> f64 {
        let linear: f64 = self.parent.b().iter().zip(&self.phi).map(|(b, p)| b * p).sum();
        let max = self.logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = self.logw.iter().map(|l| (l - max).exp()).sum();
        -linear + self.eta * (max + total.ln()).exp()
    }

    fn residual(&self) -> f64 {
        let gamma: Vec<f64> = self.logw.iter().map(|l| l.exp()).collect();
        inf_norm(&self.parent.residual(&gamma))
    }

    fn update_marginal(&mut self, offset: usize, axis: usize, weights: &[f64], damping: f64) {
        let grid = self.problem.grid();
        let n = grid.sizes()[axis];
        let stride = grid.strides()[axis];
        let outer = self.logw.len() / (n * stride);
        let mut max = vec![f64::NEG_INFINITY; n];
        for_each_coord(outer, n, stride, |l, i| max[i] = max[i].max(self.logw[l]));
        let mut sum = vec![0.0; n];
        for_each_coord(outer, n, stride, |l, i| sum[i] += (self.logw[l] - max[i]).exp());
        let delta: Vec<f64> = (0..n)
            .map(|i| damping * (weights[i].ln() - max[i] - sum[i].ln()))
            .collect();
        let logw = &mut self.logw;
        for_each_coord(outer, n, stride, |l, i| logw[l] += delta[i]);
        for i in 0..n {
            self.phi[offset + i] += self.eta * delta[i];
        }
    }

    fn update_constraint(
        &mut self,
        column: usize,
        indices: &[usize],
        values: &[f64],
        config: &SinkhornConfig,
    ) -> Result<()> {
        let eta = self.eta;
        let base: Vec<f64> = indices.iter().map(|&l| self.logw[l]).collect();
        if values.iter().all(|q| *q == 0.0) {
            return Ok(());
        }
        if values.iter().all(|q| *q >= 0.0) || values.iter().all(|q| *q <= 0.0) {
            return Err(Error::RootNotBracketed { column });
        }
        // f(t) = log Σ_{q>0} q e^{L + tq/η} - log Σ_{q<0} |q| e^{L + tq/η} is strictly increasing.
        let eval = |t: f64| -> (f64, f64) {
            let mut pos = (f64::NEG_INFINITY, 0.0, 0.0);
            let mut neg = (f64::NEG_INFINITY, 0.0, 0.0);
            for (l, &q) in base.iter().zip(values) {
                if q == 0.0 {
                    continue;
                }
                let s = l + t * q / eta + q.abs().ln();
                let acc = if q > 0.0 { &mut pos } else { &mut neg };
                if s > acc.0 {
                    let scale = (acc.0 - s).exp();
                    acc.1 *= scale;
                    acc.2 *= scale;
                    acc.0 = s;
                }
                let e = (s - acc.0).exp();
                acc.1 += e;
                acc.2 += e * q.abs();
            }
            let f = (pos.0 + pos.1.ln()) - (neg.0 + neg.1.ln());
            let slope = (pos.2 / pos.1 + neg.2 / neg.1) / eta;
            (f, slope)
        };

        let mut t = 0.0;
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut solved = false;
        for _ in 0..config.newton_max {
            let (f, slope) = eval(t);
            if f.abs() <= config.newton_tol {
                solved = true;
                break;
            }
            if f < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let mut next = t - f / slope;
            if !next.is_finite() || next <= lo || next >= hi {
                if lo.is_finite() && hi.is_finite() {
                    next = 0.5 * (lo + hi);
                } else {
                    break;
                }
            }
            if (next - t).abs() <= 1e-15 * (1.0 + t.abs()) {
                t = next;
                solved = true;
                break;
            }
            t = next;
        }
        if !solved {
            t = bisect(&eval, t, lo, hi, config.newton_tol).ok_or(Error::RootNotBracketed { column })?;
        }
        let step = config.damping * t;
        for (&l, &q) in indices.iter().zip(values) {
            self.logw[l] += step * q / eta;
        }
        self.phi[column] += step;
        Ok(())
    }
}

fn bisect(eval: &impl Fn(f64) -> (f64, f64), start: f64, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut width = 1.0_f64.max(start.abs());
    while !lo.is_finite() {
        let cand = start - width;
        if eval(cand).0 < 0.0 {
            lo = cand;
        } else {
            hi = hi.min(cand);
            width *= 2.0;
        }
        if width > 1e300 {
            return None;
        }
    }
    while !hi.is_finite() {
        let cand = start + width;
        if eval(cand).0 > 0.0 {
            hi = cand;
        } else {
            lo = lo.max(cand);
            width *= 2.0;
        }
        if width > 1e300 {
            return None;
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        let f = eval(mid).0;
        if f.abs() <= tol || hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            return Some(mid);
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Calls `f(ℓ, i)` for every cell `ℓ` whose coordinate on the axis of size `n` and
/// stride `stride` is `i`, in increasing `ℓ`.
fn for_each_coord(outer: usize, n: usize, stride: usize, mut f: impl FnMut(usize, usize)) {
    let mut l = 0;
    for _ in 0..outer {
        for i in 0..n {
            for _ in 0..stride {
                f(l, i);
                l += 1;
            }
        }
    }
}

/// Minimizes `Φ(·, ε)` by block coordinate descent.
pub fn sinkhorn_solve(
    problem: &Problem,
    eps: f64,
    config: &SinkhornConfig,
    warm_start: Option<&[f64]>,
) -> Result<SinkhornResult> {
    config.validate()?;
    let reduced = problem.system();
    let parent = build_system(problem.marginals(), problem.free(), problem.basis())?;
    let phi = match warm_start {
        Some(w) if w.len() != reduced.dim() => {
            return Err(Error::DimensionMismatch {
                expected: reduced.dim(),
                got: w.len(),
            })
        }
        Some(w) => reduced.embed(w),
        None => vec![0.0; parent.dim()],
    };
    let eta = problem.eta();
    let cost = problem.cost().value(eps);
    let ax = parent.rows().mul_vec(&phi);
    let logw: Vec<f64> = ax
        .iter()
        .zip(&cost)
        .zip(problem.log_reference())
        .map(|((a, c), r)| (a - c) / eta + r)
        .collect();

    let mut blocks = Vec::new();
    let mut offset = 0;
    for (axis, mu) in problem.marginals().iter().enumerate() {
        if problem.free()[axis] {
            continue;
        }
        blocks.push(Block::Marginal {
            offset,
            axis,
            weights: mu.weights().to_vec(),
        });
        offset += mu.len();
    }
    for (j, v) in problem.basis().vectors().iter().enumerate() {
        debug_assert!(matches!(parent.labels()[offset + j], ColumnLabel::Constraint { .. }));
        blocks.push(Block::Constraint {
            column: offset + j,
            indices: v.indices.clone(),
            values: v.values.clone(),
        });
    }

    let mut state = State {
        problem,
        parent,
        phi,
        logw,
        eta,
    };
    let mut residual = state.residual();
    let mut iterations = 0;
    let mut descent_violations = 0;
    let mut last = if config.check_descent { state.objective() } else { 0.0 };
    while residual > config.tol && iterations < config.max_iters {
        for block in &blocks {
            match block {
                Block::Marginal { offset, axis, weights } => {
                    state.update_marginal(*offset, *axis, weights, config.damping)
                }
                Block::Constraint {
                    column,
                    indices,
                    values,
                } => state.update_constraint(*column, indices, values, config)?,
            }
            if config.check_descent {
                let now = state.objective();
                if now > last + 1e-12 * last.abs().max(1.0) {
                    descent_violations += 1;
                }
                last = now;
            }
        }
        iterations += 1;
        residual = state.residual();
        if !residual.is_finite() {
            return Err(Error::Overflow { eps });
        }
    }

    let potentials = reduced.fold(&state.phi);
    let value = phi_value(problem, &potentials, eps)?;
    Ok(SinkhornResult {
        potentials,
        iterations,
        residual,
        converged: residual <= config.tol,
        value,
        descent_violations,
    })
}

/// `-Φ` at the Sinkhorn optimum; adding `η` gives the regularized primal value.
pub fn dual_value_at_optimum(problem: &Problem, eps: f64, config: &SinkhornConfig) -> Result<f64> {
    let result = sinkhorn_solve(problem, eps, config, None)?;
    if !result.converged {
        return Err(Error::InitialConditionFailed(format!(
            "Sinkhorn stopped at residual {:.3e} after {} iterations",
            result.residual, result.iterations
        )));
    }
    Ok(-result.value)
}
