use nalgebra::DMatrix;

use super::{check_gauge, mirror_lower, parent_in_gauge, Gauge};
use crate::dual::{DualModel, LocalModel};
use crate::error::{Error, Result};
use crate::linalg::LogSumExp;
use crate::problem::{Family, Problem};

/// Three marginals, `w` eliminated, `u₀ = v₀ = 0`.
#[derive(Debug, Clone)]
pub struct ThreeMarginalKernel<'a> {
    problem: &'a Problem,
    sizes: [usize; 3],
    weights: [Vec<f64>; 3],
    log_weights: [Vec<f64>; 2],
    gauge: Gauge,
}

struct Pass {
    log_s: Vec<f64>,
    /// `Σ_s p_rst`, indexed `[r·N3 + t]`.
    pu: Vec<f64>,
    /// `Σ_r p_rst`, indexed `[s·N3 + t]`.
    pv: Vec<f64>,
    /// `Σ_t γ_rst`, indexed `[r·N2 + s]`.
    puv: Vec<f64>,
    /// `Σ_rs p_rst c'_rst`.
    cbar: Vec<f64>,
    /// `Σ_st γ_rst c'_rst` and `Σ_rt γ_rst c'_rst`.
    cu: Vec<f64>,
    cv: Vec<f64>,
    gamma: Option<Vec<f64>>,
}

impl<'a> ThreeMarginalKernel<'a> {
    pub fn new(problem: &'a Problem) -> Result<Self> {
        if problem.family() != Family::ThreeMarginal {
            return Err(Error::Unsupported("three-marginal kernel needs a three-marginal problem".into()));
        }
        check_gauge(problem, 2, "three-marginal")?;
        let m = problem.marginals();
        let sizes = [m[0].len(), m[1].len(), m[2].len()];
        let weights = [m[0].weights().to_vec(), m[1].weights().to_vec(), m[2].weights().to_vec()];
        let log_weights = [
            weights[0].iter().map(|w| w.ln()).collect(),
            weights[1].iter().map(|w| w.ln()).collect(),
        ];
        Ok(Self {
            problem,
            sizes,
            weights,
            log_weights,
            gauge: Gauge::new(sizes[0] + sizes[1], &[0, sizes[0]]),
        })
    }

    fn pass(&self, x: &[f64], eps: f64, keep_gamma: bool) -> Result<Pass> {
        self.gauge.check(x)?;
        let full = self.gauge.expand(x);
        let (u, v) = full.split_at(self.sizes[0]);
        let [n1, n2, n3] = self.sizes;
        let eta = self.problem.eta();
        let (c, dc) = self.problem.cost().value_and_derivative(eps);
        let mut logs = vec![0.0; c.len()];
        let mut acc = vec![LogSumExp::default(); n3];
        for r in 0..n1 {
            for s in 0..n2 {
                let base = (u[r] + v[s]) / eta + self.log_weights[0][r] + self.log_weights[1][s];
                let row = (r * n2 + s) * n3;
                for t in 0..n3 {
                    let l = base - c[row + t] / eta;
                    logs[row + t] = l;
                    acc[t].push(l);
                }
            }
        }
        let log_s: Vec<f64> = acc.iter().map(LogSumExp::value).collect();
        if log_s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { eps });
        }
        let nu = &self.weights[2];
        let mut pu = vec![0.0; n1 * n3];
        let mut pv = vec![0.0; n2 * n3];
        let mut puv = vec![0.0; n1 * n2];
        let mut cbar = vec![0.0; n3];
        let mut cu = vec![0.0; n1];
        let mut cv = vec![0.0; n2];
        for r in 0..n1 {
            for s in 0..n2 {
                let row = (r * n2 + s) * n3;
                let mut gsum = 0.0;
                for t in 0..n3 {
                    let p = (logs[row + t] - log_s[t]).exp();
                    logs[row + t] = p;
                    pu[r * n3 + t] += p;
                    pv[s * n3 + t] += p;
                    cbar[t] += p * dc[row + t];
                    let g = p * nu[t];
                    gsum += g;
                    cu[r] += g * dc[row + t];
                    cv[s] += g * dc[row + t];
                }
                puv[r * n2 + s] = gsum;
            }
        }
        let gamma = keep_gamma.then(|| {
            for (idx, p) in logs.iter_mut().enumerate() {
                *p *= nu[idx % n3];
            }
            logs
        });
        Ok(Pass {
            log_s,
            pu,
            pv,
            puv,
            cbar,
            cu,
            cv,
            gamma,
        })
    }

    /// The eliminated potentials `w_t = -η log Σ_rs e_rst`.
    pub fn eliminated(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let pass = self.pass(x, eps, false)?;
        Ok(pass.log_s.iter().map(|l| -self.problem.eta() * l).collect())
    }

    fn value_from(&self, x: &[f64], pass: &Pass) -> f64 {
        let full = self.gauge.expand(x);
        let (u, v) = full.split_at(self.sizes[0]);
        let linear: f64 = u.iter().zip(&self.weights[0]).map(|(a, b)| a * b).sum::<f64>()
            + v.iter().zip(&self.weights[1]).map(|(a, b)| a * b).sum::<f64>();
        let logs: f64 = pass.log_s.iter().zip(&self.weights[2]).map(|(l, w)| l * w).sum();
        -linear + self.problem.eta() * (logs + 1.0)
    }

    fn gradient_from(&self, pass: &Pass) -> Vec<f64> {
        let [n1, n2, n3] = self.sizes;
        let nu = &self.weights[2];
        let mut g = Vec::with_capacity(n1 + n2);
        for r in 0..n1 {
            let m: f64 = (0..n3).map(|t| nu[t] * pass.pu[r * n3 + t]).sum();
            g.push(m - self.weights[0][r]);
        }
        for s in 0..n2 {
            let m: f64 = (0..n3).map(|t| nu[t] * pass.pv[s * n3 + t]).sum();
            g.push(m - self.weights[1][s]);
        }
        self.gauge.restrict(&g)
    }
}

impl DualModel for ThreeMarginalKernel<'_> {
    fn problem(&self) -> &Problem {
        self.problem
    }

    fn name(&self) -> &'static str {
        "three_marginal"
    }

    fn dim(&self) -> usize {
        self.gauge.dim()
    }

    fn value(&self, x: &[f64], eps: f64) -> Result<f64> {
        let pass = self.pass(x, eps, false)?;
        Ok(self.value_from(x, &pass))
    }

    fn gradient(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let pass = self.pass(x, eps, false)?;
        Ok(self.gradient_from(&pass))
    }

    fn local(&self, x: &[f64], eps: f64) -> Result<LocalModel> {
        let pass = self.pass(x, eps, false)?;
        let [n1, n2, n3] = self.sizes;
        let nu = &self.weights[2];
        let inv_eta = 1.0 / self.problem.eta();
        // Stack [P^u; P^v]·diag(√ν): its Gram matrix is Σ_t ν_t P_t P_tᵀ for all blocks.
        let stacked = DMatrix::from_fn(n1 + n2, n3, |i, t| {
            let p = if i < n1 { pass.pu[i * n3 + t] } else { pass.pv[(i - n1) * n3 + t] };
            p * nu[t].sqrt()
        });
        let mut h = -(&stacked * stacked.transpose());
        let grad_full = {
            let mut g = Vec::with_capacity(n1 + n2);
            g.extend((0..n1).map(|r| (0..n3).map(|t| nu[t] * pass.pu[r * n3 + t]).sum::<f64>()));
            g.extend((0..n2).map(|s| (0..n3).map(|t| nu[t] * pass.pv[s * n3 + t]).sum::<f64>()));
            g
        };
        for (i, m) in grad_full.iter().enumerate() {
            h[(i, i)] += m;
        }
        for r in 0..n1 {
            for s in 0..n2 {
                h[(n1 + s, r)] += pass.puv[r * n2 + s];
            }
        }
        mirror_lower(&mut h);
        h *= inv_eta;

        let mut mixed = Vec::with_capacity(n1 + n2);
        for r in 0..n1 {
            let centred: f64 = (0..n3).map(|t| nu[t] * pass.pu[r * n3 + t] * pass.cbar[t]).sum();
            mixed.push(-(pass.cu[r] - centred) * inv_eta);
        }
        for s in 0..n2 {
            let centred: f64 = (0..n3).map(|t| nu[t] * pass.pv[s * n3 + t] * pass.cbar[t]).sum();
            mixed.push(-(pass.cv[s] - centred) * inv_eta);
        }
        Ok(LocalModel {
            value: self.value_from(x, &pass),
            gradient: self.gradient_from(&pass),
            hessian: self.gauge.restrict_matrix(&h),
            mixed: self.gauge.restrict(&mixed),
        })
    }

    fn coupling(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        Ok(self.pass(x, eps, true)?.gamma.unwrap_or_default())
    }

    fn to_generic(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let mut parent = self.gauge.expand(x);
        parent.extend(self.eliminated(x, eps)?);
        Ok(self.problem.system().fold(&parent))
    }

    fn from_generic(&self, phi: &[f64], _eps: f64) -> Result<Vec<f64>> {
        let parent = parent_in_gauge(self.problem, phi, &[0, self.sizes[0]])?;
        Ok(self.gauge.restrict(&parent[..self.sizes[0] + self.sizes[1]]))
    }

    fn eps_partial(&self, x: &[f64], eps: f64) -> Result<f64> {
        let pass = self.pass(x, eps, false)?;
        Ok(-pass.cbar.iter().zip(&self.weights[2]).map(|(c, w)| c * w).sum::<f64>())
    }
}
