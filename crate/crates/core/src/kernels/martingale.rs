use nalgebra::DMatrix;

use super::{check_gauge, mirror_lower, parent_in_gauge, Gauge};
use crate::dual::{DualModel, LocalModel};
use crate::error::{Error, Result};
use crate::linalg::LogSumExp;
use crate::problem::{Family, Problem};

/// One-period martingale transport, `u` eliminated, `v₀ = g₀ = 0`.
///
/// `Φ̄(v, g) = -Σ_s v_s ν_s + η Σ_r μ_r log Σ_s exp((v_s + g_r(y_s - x_r) - c_rs)/η) ν_s + η`.
#[derive(Debug, Clone)]
pub struct MartingaleKernel<'a> {
    problem: &'a Problem,
    n: usize,
    k: usize,
    mu: Vec<f64>,
    nu: Vec<f64>,
    log_nu: Vec<f64>,
    /// `y_s - x_r`, row-major.
    step: Vec<f64>,
    gauge: Gauge,
}

struct Pass {
    p: Vec<f64>,
    log_s: Vec<f64>,
    /// `A_r = Σ_s p_rs (y_s - x_r)`.
    mean_step: Vec<f64>,
    cbar: Vec<f64>,
    dc: Vec<f64>,
}

impl<'a> MartingaleKernel<'a> {
    pub fn new(problem: &'a Problem) -> Result<Self> {
        if problem.family() != Family::Martingale {
            return Err(Error::Unsupported("martingale kernel needs a martingale problem".into()));
        }
        check_gauge(problem, 2, "martingale")?;
        let x = problem.marginals()[0].scalars();
        let y = problem.marginals()[1].scalars();
        let nu = problem.marginals()[1].weights().to_vec();
        let step = x.iter().flat_map(|xr| y.iter().map(move |ys| ys - xr)).collect();
        Ok(Self {
            problem,
            n: x.len(),
            k: y.len(),
            mu: problem.marginals()[0].weights().to_vec(),
            log_nu: nu.iter().map(|w| w.ln()).collect(),
            nu,
            step,
            gauge: Gauge::new(y.len() + x.len(), &[0, y.len()]),
        })
    }

    fn pass(&self, x: &[f64], eps: f64) -> Result<Pass> {
        self.gauge.check(x)?;
        let full = self.gauge.expand(x);
        let (v, g) = full.split_at(self.k);
        let (n, k, eta) = (self.n, self.k, self.problem.eta());
        let (c, dc) = self.problem.cost().value_and_derivative(eps);
        let mut p = vec![0.0; n * k];
        let mut log_s = vec![0.0; n];
        let mut mean_step = vec![0.0; n];
        let mut cbar = vec![0.0; n];
        for r in 0..n {
            let row = r * k;
            let mut acc = LogSumExp::default();
            for s in 0..k {
                let l = (v[s] + g[r] * self.step[row + s] - c[row + s]) / eta + self.log_nu[s];
                p[row + s] = l;
                acc.push(l);
            }
            let ls = acc.value();
            if !ls.is_finite() {
                return Err(Error::Overflow { eps });
            }
            log_s[r] = ls;
            for s in 0..k {
                let q = (p[row + s] - ls).exp();
                p[row + s] = q;
                mean_step[r] += q * self.step[row + s];
                cbar[r] += q * dc[row + s];
            }
        }
        Ok(Pass {
            p,
            log_s,
            mean_step,
            cbar,
            dc,
        })
    }

    /// The eliminated potentials `u_r = -η log Σ_s e_rs`.
    pub fn eliminated(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let pass = self.pass(x, eps)?;
        Ok(pass.log_s.iter().map(|l| -self.problem.eta() * l).collect())
    }

    fn value_from(&self, x: &[f64], pass: &Pass) -> f64 {
        let full = self.gauge.expand(x);
        let linear: f64 = full[..self.k].iter().zip(&self.nu).map(|(a, b)| a * b).sum();
        let logs: f64 = pass.log_s.iter().zip(&self.mu).map(|(l, w)| l * w).sum();
        -linear + self.problem.eta() * (logs + 1.0)
    }

    fn gradient_from(&self, pass: &Pass) -> Vec<f64> {
        let (n, k) = (self.n, self.k);
        let mut grad: Vec<f64> = self.nu.iter().map(|w| -w).collect();
        for r in 0..n {
            for s in 0..k {
                grad[s] += self.mu[r] * pass.p[r * k + s];
            }
        }
        grad.extend((0..n).map(|r| self.mu[r] * pass.mean_step[r]));
        self.gauge.restrict(&grad)
    }
}

impl DualModel for MartingaleKernel<'_> {
    fn problem(&self) -> &Problem {
        self.problem
    }

    fn name(&self) -> &'static str {
        "martingale"
    }

    fn dim(&self) -> usize {
        self.gauge.dim()
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
        let (n, k) = (self.n, self.k);
        let inv_eta = 1.0 / self.problem.eta();
        let total = k + n;

        let scaled = DMatrix::from_fn(k, n, |s, r| pass.p[r * k + s] * self.mu[r].sqrt());
        let mut h = DMatrix::zeros(total, total);
        h.view_mut((0, 0), (k, k)).copy_from(&(-(&scaled * scaled.transpose())));
        let mut mixed = vec![0.0; total];
        for r in 0..n {
            let row = r * k;
            let (mu, a_bar, c_bar) = (self.mu[r], pass.mean_step[r], pass.cbar[r]);
            let mut second = 0.0;
            let mut cross = 0.0;
            for s in 0..k {
                let q = pass.p[row + s];
                let a = self.step[row + s];
                let dc = pass.dc[row + s] - c_bar;
                h[(s, s)] += mu * q;
                // D²_vg: covariance of 1{s = j} and (y_s - x_r) under p_r
                h[(k + r, s)] = mu * q * (a - a_bar);
                second += q * a * a;
                cross += q * a * dc;
                mixed[s] -= mu * q * dc;
            }
            h[(k + r, k + r)] = mu * (second - a_bar * a_bar);
            mixed[k + r] = -mu * cross;
        }
        mirror_lower(&mut h);
        h *= inv_eta;
        for m in &mut mixed {
            *m *= inv_eta;
        }
        Ok(LocalModel {
            value: self.value_from(x, &pass),
            gradient: self.gradient_from(&pass),
            hessian: self.gauge.restrict_matrix(&h),
            mixed: self.gauge.restrict(&mixed),
        })
    }

    fn coupling(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let pass = self.pass(x, eps)?;
        let k = self.k;
        Ok(pass.p.iter().enumerate().map(|(idx, p)| p * self.mu[idx / k]).collect())
    }

    fn to_generic(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let mut parent = self.eliminated(x, eps)?;
        parent.extend(self.gauge.expand(x));
        Ok(self.problem.system().fold(&parent))
    }

    fn from_generic(&self, phi: &[f64], _eps: f64) -> Result<Vec<f64>> {
        let parent = parent_in_gauge(self.problem, phi, &[self.n, self.n + self.k])?;
        Ok(self.gauge.restrict(&parent[self.n..]))
    }

    fn eps_partial(&self, x: &[f64], eps: f64) -> Result<f64> {
        let pass = self.pass(x, eps)?;
        Ok(-pass.cbar.iter().zip(&self.mu).map(|(c, w)| c * w).sum::<f64>())
    }
}
