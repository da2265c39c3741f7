//! The dual objective `Φ(φ, ε) = -bᵀφ + η Σ_ℓ exp((A_ℓφ - c_ℓ(ε))/η) 𝛍_ℓ` on the
//! rank-reduced constraint system, and the interface shared by all dual models.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problem::Problem;

/// Exponents above which the objective switches to log-compensated summation.
pub const LOG_DOMAIN_THRESHOLD: f64 = 300.0;

/// Value, gradient, Hessian and mixed `ε`-gradient at one point.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub mixed: Vec<f64>,
}

/// A strictly convex dual objective in some gauge, with a map to the generic gauge.
pub trait DualModel: Send + Sync {
    fn problem(&self) -> &Problem;

    /// Short tag used in reports and error messages.
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn value(&self, x: &[f64], eps: f64) -> Result<f64>;

    fn gradient(&self, x: &[f64], eps: f64) -> Result<Vec<f64>>;

    /// Everything the ODE right-hand side needs, in one pass over the grid.
    fn local(&self, x: &[f64], eps: f64) -> Result<LocalModel>;

    fn hessian(&self, x: &[f64], eps: f64) -> Result<DMatrix<f64>> {
        Ok(self.local(x, eps)?.hessian)
    }

    /// `∂ε ∇Φ`.
    fn mixed(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        Ok(self.local(x, eps)?.mixed)
    }

    /// Gibbs coupling of the potentials, eliminated blocks at their partial optimum.
    fn coupling(&self, x: &[f64], eps: f64) -> Result<Vec<f64>>;

    /// Potentials of the reduced generic system describing the same coupling.
    fn to_generic(&self, x: &[f64], eps: f64) -> Result<Vec<f64>>;

    /// Inverse of [`DualModel::to_generic`] at stationary points.
    fn from_generic(&self, phi: &[f64], eps: f64) -> Result<Vec<f64>>;

    /// `∂εΦ = -c'(ε)ᵀγ`.
    fn eps_partial(&self, x: &[f64], eps: f64) -> Result<f64> {
        let gamma = self.coupling(x, eps)?;
        let dc = self.problem().cost().derivative(eps);
        Ok(-gamma.iter().zip(&dc).map(|(g, c)| g * c).sum::<f64>())
    }
}

/// Exponential weights `w_ℓ` of one evaluation.
#[derive(Debug, Clone)]
pub struct EvalCache {
    /// `(A_ℓφ - c_ℓ)/η + log 𝛍_ℓ`.
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
    pub max_exponent: f64,
}

impl EvalCache {
    pub fn new(problem: &Problem, phi: &[f64], eps: f64) -> Result<Self> {
        let sys = problem.system();
        if phi.len() != sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.dim(),
                got: phi.len(),
            });
        }
        let eta = problem.eta();
        let cost = problem.cost().value(eps);
        let rows = sys.rows();
        let mut max_exponent = f64::NEG_INFINITY;
        let log_weights: Vec<f64> = (0..rows.nrows())
            .map(|l| {
                let s = (rows.row_dot(l, phi) - cost[l]) / eta + problem.log_reference()[l];
                max_exponent = max_exponent.max(s);
                s
            })
            .collect();
        if !max_exponent.is_finite() {
            return Err(Error::Overflow { eps });
        }
        let weights = log_weights.iter().map(|s| s.exp()).collect();
        Ok(Self {
            log_weights,
            weights,
            max_exponent,
        })
    }

    /// `Σ_ℓ w_ℓ`, max-shifted past [`LOG_DOMAIN_THRESHOLD`].
    pub fn total(&self, eps: f64) -> Result<f64> {
        let total = if self.max_exponent <= LOG_DOMAIN_THRESHOLD {
            self.weights.iter().sum()
        } else {
            let m = self.max_exponent;
            let shifted: f64 = self.log_weights.iter().map(|s| (s - m).exp()).sum();
            (m + shifted.ln()).exp()
        };
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::Overflow { eps })
        }
    }

    fn checked_weights(&self, eps: f64) -> Result<&[f64]> {
        if self.max_exponent > 709.0 {
            Err(Error::Overflow { eps })
        } else {
            Ok(&self.weights)
        }
    }
}

/// `Φ(φ, ε)` on the reduced system.
pub fn phi_value(problem: &Problem, phi: &[f64], eps: f64) -> Result<f64> {
    let cache = EvalCache::new(problem, phi, eps)?;
    value_from_cache(problem, phi, &cache, eps)
}

fn value_from_cache(problem: &Problem, phi: &[f64], cache: &EvalCache, eps: f64) -> Result<f64> {
    let linear: f64 = problem.system().b().iter().zip(phi).map(|(b, p)| b * p).sum();
    Ok(-linear + problem.eta() * cache.total(eps)?)
}

/// `∇Φ = -b + Aᵀw`.
pub fn gradient(problem: &Problem, phi: &[f64], eps: f64) -> Result<Vec<f64>> {
    let cache = EvalCache::new(problem, phi, eps)?;
    gradient_from_weights(problem, cache.checked_weights(eps)?)
}

fn gradient_from_weights(problem: &Problem, w: &[f64]) -> Result<Vec<f64>> {
    let sys = problem.system();
    let mut g = sys.rows().tr_mul(w);
    for (gi, bi) in g.iter_mut().zip(sys.b()) {
        *gi -= bi;
    }
    Ok(g)
}

/// `(1/η) Aᵀ Diag(w) A`.
pub fn hessian(problem: &Problem, phi: &[f64], eps: f64) -> Result<DMatrix<f64>> {
    let cache = EvalCache::new(problem, phi, eps)?;
    Ok(assemble_second_order(problem, cache.checked_weights(eps)?, None).0)
}

/// `-(1/η) Σ_ℓ c'_ℓ(ε) w_ℓ A_ℓᵀ`.
pub fn mixed_eps_gradient(problem: &Problem, phi: &[f64], eps: f64) -> Result<Vec<f64>> {
    let cache = EvalCache::new(problem, phi, eps)?;
    let w = cache.checked_weights(eps)?;
    let dc = problem.cost().derivative(eps);
    let scaled: Vec<f64> = w.iter().zip(&dc).map(|(wl, c)| -wl * c / problem.eta()).collect();
    Ok(problem.system().rows().tr_mul(&scaled))
}

/// Gibbs coupling `γ_ℓ = w_ℓ`.
pub fn recover_primal(problem: &Problem, phi: &[f64], eps: f64) -> Result<Vec<f64>> {
    let cache = EvalCache::new(problem, phi, eps)?;
    cache.checked_weights(eps)?;
    Ok(cache.weights)
}

fn assemble_second_order(problem: &Problem, w: &[f64], dc: Option<&[f64]>) -> (DMatrix<f64>, Vec<f64>) {
    let rows = problem.system().rows();
    let e = rows.ncols();
    let inv_eta = 1.0 / problem.eta();
    let mut h = DMatrix::zeros(e, e);
    let mut mixed = vec![0.0; e];
    let data = h.as_mut_slice();
    for (l, &wl) in w.iter().enumerate() {
        let (cols, vals) = rows.row(l);
        let scale = wl * inv_eta;
        for (a, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
            let sa = scale * va;
            for (&cb, &vb) in cols[..=a].iter().zip(vals) {
                let (i, j) = if ca >= cb { (ca, cb) } else { (cb, ca) };
                data[j as usize * e + i as usize] += sa * vb;
            }
            if let Some(dc) = dc {
                mixed[ca as usize] -= sa * dc[l];
            }
        }
    }
    // entries were accumulated in the lower triangle (row ≥ column)
    for j in 0..e {
        for i in (j + 1)..e {
            let v = h[(i, j)];
            h[(j, i)] = v;
        }
    }
    (h, mixed)
}

/// The generic objective on the reduced system, no variables eliminated.
#[derive(Debug, Clone, Copy)]
pub struct GenericDual<'a> {
    problem: &'a Problem,
}

impl<'a> GenericDual<'a> {
    pub fn new(problem: &'a Problem) -> Self {
        Self { problem }
    }
}

impl DualModel for GenericDual<'_> {
    fn problem(&self) -> &Problem {
        self.problem
    }

    fn name(&self) -> &'static str {
        "generic"
    }

    fn dim(&self) -> usize {
        self.problem.system().dim()
    }

    fn value(&self, x: &[f64], eps: f64) -> Result<f64> {
        phi_value(self.problem, x, eps)
    }

    fn gradient(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        gradient(self.problem, x, eps)
    }

    fn local(&self, x: &[f64], eps: f64) -> Result<LocalModel> {
        let cache = EvalCache::new(self.problem, x, eps)?;
        let value = value_from_cache(self.problem, x, &cache, eps)?;
        let w = cache.checked_weights(eps)?;
        let gradient = gradient_from_weights(self.problem, w)?;
        let dc = self.problem.cost().derivative(eps);
        let (hessian, mixed) = assemble_second_order(self.problem, w, Some(&dc));
        Ok(LocalModel {
            value,
            gradient,
            hessian,
            mixed,
        })
    }

    fn hessian(&self, x: &[f64], eps: f64) -> Result<DMatrix<f64>> {
        hessian(self.problem, x, eps)
    }

    fn mixed(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        mixed_eps_gradient(self.problem, x, eps)
    }

    fn coupling(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        recover_primal(self.problem, x, eps)
    }

    fn to_generic(&self, x: &[f64], _eps: f64) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }

    fn from_generic(&self, phi: &[f64], _eps: f64) -> Result<Vec<f64>> {
        Ok(phi.to_vec())
    }
}
