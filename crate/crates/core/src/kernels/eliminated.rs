use nalgebra::DMatrix;

use crate::dual::{DualModel, LocalModel};
use crate::error::{Error, Result};
use crate::linalg::LogSumExp;
use crate::problem::Problem;

/// Any problem with its first marginal's potential eliminated; the remaining potentials
/// keep the gauge of the reduced generic system.
///
/// Every coupling it produces has total mass `Σ_r μ_r = 1` by construction, which the
/// free-marginal families rely on.
#[derive(Debug, Clone)]
pub struct EliminatedDual<'a> {
    problem: &'a Problem,
    /// Size of the eliminated block.
    n: usize,
    /// Cells per slice of the first coordinate.
    block: usize,
    mu: Vec<f64>,
    log_mu: Vec<f64>,
}

struct Pass {
    gamma: Vec<f64>,
    log_s: Vec<f64>,
    cbar: Vec<f64>,
    dc: Vec<f64>,
}

impl<'a> EliminatedDual<'a> {
    pub fn new(problem: &'a Problem) -> Result<Self> {
        if problem.free()[0] {
            return Err(Error::Unsupported("the eliminated marginal must be constrained".into()));
        }
        let mu = problem.marginals()[0].weights().to_vec();
        let n = mu.len();
        Ok(Self {
            problem,
            n,
            block: problem.cells() / n,
            log_mu: mu.iter().map(|m| m.ln()).collect(),
            mu,
        })
    }

    fn retained_b(&self) -> &[f64] {
        &self.problem.system().b()[self.n..]
    }

    fn pass(&self, x: &[f64], eps: f64) -> Result<Pass> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let rows = self.problem.system().rows();
        let n0 = self.n as u32;
        let eta = self.problem.eta();
        let (c, dc) = self.problem.cost().value_and_derivative(eps);
        let log_ref = self.problem.log_reference();
        let mut gamma = vec![0.0; c.len()];
        let mut log_s = vec![0.0; self.n];
        let mut cbar = vec![0.0; self.n];
        for r in 0..self.n {
            let span = r * self.block..(r + 1) * self.block;
            let mut acc = LogSumExp::default();
            for l in span.clone() {
                let (cols, vals) = rows.row(l);
                let mut ax = 0.0;
                for (&col, &v) in cols.iter().zip(vals) {
                    if col >= n0 {
                        ax += v * x[(col - n0) as usize];
                    }
                }
                let s = (ax - c[l]) / eta + log_ref[l] - self.log_mu[r];
                gamma[l] = s;
                acc.push(s);
            }
            let ls = acc.value();
            if !ls.is_finite() {
                return Err(Error::Overflow { eps });
            }
            log_s[r] = ls;
            for l in span {
                let p = (gamma[l] - ls).exp();
                cbar[r] += p * dc[l];
                gamma[l] = p * self.mu[r];
            }
        }
        Ok(Pass {
            gamma,
            log_s,
            cbar,
            dc,
        })
    }

    /// Potentials of the first marginal, `u_r = -η log S_r`.
    pub fn eliminated(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let pass = self.pass(x, eps)?;
        Ok(pass.log_s.iter().map(|l| -self.problem.eta() * l).collect())
    }

    fn value_from(&self, x: &[f64], pass: &Pass) -> f64 {
        let linear: f64 = self.retained_b().iter().zip(x).map(|(b, v)| b * v).sum();
        let logs: f64 = pass.log_s.iter().zip(&self.mu).map(|(l, m)| l * m).sum();
        -linear + self.problem.eta() * (logs + 1.0)
    }

    /// `Σ_ℓ γ_ℓ f_ℓ` and per-slice means `m_r` of the retained features.
    fn feature_sums(&self, pass: &Pass, weight: impl Fn(usize) -> f64) -> (Vec<f64>, DMatrix<f64>) {
        let rows = self.problem.system().rows();
        let n0 = self.n as u32;
        let e = self.dim();
        let mut total = vec![0.0; e];
        let mut means = DMatrix::zeros(e, self.n);
        for r in 0..self.n {
            for l in r * self.block..(r + 1) * self.block {
                let g = pass.gamma[l] * weight(l);
                let (cols, vals) = rows.row(l);
                for (&col, &v) in cols.iter().zip(vals) {
                    if col >= n0 {
                        let k = (col - n0) as usize;
                        total[k] += g * v;
                        means[(k, r)] += pass.gamma[l] / self.mu[r] * v;
                    }
                }
            }
        }
        (total, means)
    }

    fn gradient_from(&self, pass: &Pass) -> Vec<f64> {
        let (mut g, _) = self.feature_sums(pass, |_| 1.0);
        for (gi, bi) in g.iter_mut().zip(self.retained_b()) {
            *gi -= bi;
        }
        g
    }
}

impl DualModel for EliminatedDual<'_> {
    fn problem(&self) -> &Problem {
        self.problem
    }

    fn name(&self) -> &'static str {
        "eliminated"
    }

    fn dim(&self) -> usize {
        self.problem.system().dim() - self.n
    }

    fn value(&self, x: &[f64], eps: f64) -> Result<f64> {
        let pass = self.pass(x, eps)?;
        Ok(self.value_from(x, &pass))
    }

    fn gradient(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let pass = self.pass(x, eps)?;
        Ok(self.gradient_from(&pass))
    }

    fn local(&self, x: &[f64], eps: f64) -> Result<LocalModel> {
        let pass = self.pass(x, eps)?;
        let rows = self.problem.system().rows();
        let n0 = self.n as u32;
        let e = self.dim();
        let inv_eta = 1.0 / self.problem.eta();

        let (mut gradient, means) = self.feature_sums(&pass, |_| 1.0);
        for (gi, bi) in gradient.iter_mut().zip(self.retained_b()) {
            *gi -= bi;
        }
        let (weighted_c, _) = self.feature_sums(&pass, |l| pass.dc[l]);

        let scaled = DMatrix::from_fn(e, self.n, |k, r| means[(k, r)] * self.mu[r].sqrt());
        let mut h = -(&scaled * scaled.transpose());
        for (l, &g) in pass.gamma.iter().enumerate() {
            let (cols, vals) = rows.row(l);
            for (&ca, &va) in cols.iter().zip(vals) {
                if ca < n0 {
                    continue;
                }
                for (&cb, &vb) in cols.iter().zip(vals) {
                    if cb >= n0 {
                        h[((ca - n0) as usize, (cb - n0) as usize)] += g * va * vb;
                    }
                }
            }
        }
        h *= inv_eta;

        let mut mixed: Vec<f64> = weighted_c.iter().map(|v| -v).collect();
        for r in 0..self.n {
            let w = self.mu[r] * pass.cbar[r];
            for (k, m) in mixed.iter_mut().enumerate() {
                *m += w * means[(k, r)];
            }
        }
        for m in &mut mixed {
            *m *= inv_eta;
        }
        Ok(LocalModel {
            value: self.value_from(x, &pass),
            gradient,
            hessian: h,
            mixed,
        })
    }

    fn coupling(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        Ok(self.pass(x, eps)?.gamma)
    }

    fn to_generic(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let mut phi = self.eliminated(x, eps)?;
        phi.extend_from_slice(x);
        Ok(phi)
    }

    fn from_generic(&self, phi: &[f64], _eps: f64) -> Result<Vec<f64>> {
        if phi.len() != self.problem.system().dim() {
            return Err(Error::DimensionMismatch {
                expected: self.problem.system().dim(),
                got: phi.len(),
            });
        }
        Ok(phi[self.n..].to_vec())
    }

    fn eps_partial(&self, x: &[f64], eps: f64) -> Result<f64> {
        let pass = self.pass(x, eps)?;
        Ok(-pass.cbar.iter().zip(&self.mu).map(|(c, m)| c * m).sum::<f64>())
    }
}
