use nalgebra::DMatrix;

use super::{check_gauge, parent_in_gauge, Gauge};
use crate::dual::{DualModel, LocalModel};
use crate::error::{Error, Result};
use crate::linalg::LogSumExp;
use crate::problem::{Family, Problem};

/// Two marginals, `v` eliminated, `u₀ = 0`.
///
/// `Φ̄(u) = -Σ_r u_r μ_r + η Σ_s ν_s log Σ_r exp((u_r - c_rs)/η) μ_r + η`.
#[derive(Debug, Clone)]
pub struct TwoMarginalKernel<'a> {
    problem: &'a Problem,
    n: usize,
    k: usize,
    log_mu: Vec<f64>,
    mu: Vec<f64>,
    nu: Vec<f64>,
    gauge: Gauge,
}

/// Conditional laws `p_rs = e_rs / Σ_r e_rs` of one evaluation, stored row-major.
pub(crate) struct Slices {
    p: Vec<f64>,
    log_s: Vec<f64>,
    cbar: Vec<f64>,
    c2bar: Vec<f64>,
    dc: Vec<f64>,
}

impl<'a> TwoMarginalKernel<'a> {
    pub fn new(problem: &'a Problem) -> Result<Self> {
        if problem.family() != Family::TwoMarginal {
            return Err(Error::Unsupported("two-marginal kernel needs a two-marginal problem".into()));
        }
        check_gauge(problem, 1, "two-marginal")?;
        let mu = problem.marginals()[0].weights().to_vec();
        let nu = problem.marginals()[1].weights().to_vec();
        Ok(Self {
            problem,
            n: mu.len(),
            k: nu.len(),
            log_mu: mu.iter().map(|m| m.ln()).collect(),
            gauge: Gauge::new(mu.len(), &[0]),
            mu,
            nu,
        })
    }

    pub(crate) fn slices(&self, x: &[f64], eps: f64) -> Result<Slices> {
        self.gauge.check(x)?;
        let u = self.gauge.expand(x);
        let (n, k, eta) = (self.n, self.k, self.problem.eta());
        let (c, dc) = self.problem.cost().value_and_derivative(eps);
        let mut acc = vec![LogSumExp::default(); k];
        let mut p = vec![0.0; n * k];
        for r in 0..n {
            for s in 0..k {
                let l = (u[r] - c[r * k + s]) / eta + self.log_mu[r];
                p[r * k + s] = l;
                acc[s].push(l);
            }
        }
        let log_s: Vec<f64> = acc.iter().map(LogSumExp::value).collect();
        if log_s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { eps });
        }
        let mut cbar = vec![0.0; k];
        let mut c2bar = vec![0.0; k];
        for r in 0..n {
            for s in 0..k {
                let idx = r * k + s;
                let q = (p[idx] - log_s[s]).exp();
                p[idx] = q;
                cbar[s] += q * dc[idx];
                c2bar[s] += q * dc[idx] * dc[idx];
            }
        }
        Ok(Slices {
            p,
            log_s,
            cbar,
            c2bar,
            dc,
        })
    }

    /// The eliminated potentials `v_s = -η log Σ_r e_rs`.
    pub fn eliminated(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let sl = self.slices(x, eps)?;
        Ok(sl.log_s.iter().map(|l| -self.problem.eta() * l).collect())
    }

    /// `∂²εΦ̄ = (1/η) Σ_s ν_s Var_s(c')` for affine cost paths.
    pub fn eps_second_partial(&self, x: &[f64], eps: f64) -> Result<f64> {
        if self.problem.cost().affine_slope().is_none() {
            return Err(Error::Unsupported("second ε-derivative needs an affine cost path".into()));
        }
        let sl = self.slices(x, eps)?;
        let var: f64 = (0..self.k)
            .map(|s| self.nu[s] * (sl.c2bar[s] - sl.cbar[s] * sl.cbar[s]))
            .sum();
        Ok(var / self.problem.eta())
    }

    fn value_from(&self, x: &[f64], sl: &Slices) -> f64 {
        let u = self.gauge.expand(x);
        let linear: f64 = u.iter().zip(&self.mu).map(|(a, b)| a * b).sum();
        let logs: f64 = sl.log_s.iter().zip(&self.nu).map(|(l, w)| l * w).sum();
        -linear + self.problem.eta() * (logs + 1.0)
    }

    fn gradient_from(&self, sl: &Slices) -> Vec<f64> {
        let mut g: Vec<f64> = self.mu.iter().map(|m| -m).collect();
        for r in 0..self.n {
            for s in 0..self.k {
                g[r] += self.nu[s] * sl.p[r * self.k + s];
            }
        }
        self.gauge.restrict(&g)
    }
}

impl DualModel for TwoMarginalKernel<'_> {
    fn problem(&self) -> &Problem {
        self.problem
    }

    fn name(&self) -> &'static str {
        "two_marginal"
    }

    fn dim(&self) -> usize {
        self.gauge.dim()
    }

    fn value(&self, x: &[f64], eps: f64) -> Result<f64> {
        let sl = self.slices(x, eps)?;
        Ok(self.value_from(x, &sl))
    }

    fn gradient(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let sl = self.slices(x, eps)?;
        Ok(self.gradient_from(&sl))
    }

    fn local(&self, x: &[f64], eps: f64) -> Result<LocalModel> {
        let sl = self.slices(x, eps)?;
        let (n, k) = (self.n, self.k);
        let inv_eta = 1.0 / self.problem.eta();
        // P·diag(√ν) turns Σ_s ν_s p_s p_sᵀ into one product.
        let scaled = DMatrix::from_fn(n, k, |r, s| sl.p[r * k + s] * self.nu[s].sqrt());
        let mut h = -(&scaled * scaled.transpose());
        let mut mixed = vec![0.0; n];
        for r in 0..n {
            let mut diag = 0.0;
            for s in 0..k {
                let q = self.nu[s] * sl.p[r * k + s];
                diag += q;
                mixed[r] -= q * (sl.dc[r * k + s] - sl.cbar[s]);
            }
            h[(r, r)] += diag;
            mixed[r] *= inv_eta;
        }
        h *= inv_eta;
        Ok(LocalModel {
            value: self.value_from(x, &sl),
            gradient: self.gradient_from(&sl),
            hessian: self.gauge.restrict_matrix(&h),
            mixed: self.gauge.restrict(&mixed),
        })
    }

    fn coupling(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let sl = self.slices(x, eps)?;
        let k = self.k;
        Ok(sl.p.iter().enumerate().map(|(idx, p)| p * self.nu[idx % k]).collect())
    }

    fn to_generic(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let mut parent = self.gauge.expand(x);
        parent.extend(self.eliminated(x, eps)?);
        Ok(self.problem.system().fold(&parent))
    }

    fn from_generic(&self, phi: &[f64], _eps: f64) -> Result<Vec<f64>> {
        let parent = parent_in_gauge(self.problem, phi, &[0])?;
        Ok(self.gauge.restrict(&parent[..self.n]))
    }

    fn eps_partial(&self, x: &[f64], eps: f64) -> Result<f64> {
        let sl = self.slices(x, eps)?;
        Ok(-sl.cbar.iter().zip(&self.nu).map(|(c, w)| c * w).sum::<f64>())
    }
}
