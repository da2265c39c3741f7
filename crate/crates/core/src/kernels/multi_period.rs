use nalgebra::DMatrix;

use super::{check_gauge, mirror_lower, parent_in_gauge, Gauge};
use crate::dual::{DualModel, LocalModel};
use crate::error::{Error, Result};
use crate::linalg::LogSumExp;
use crate::problem::{Family, Problem};

/// Two-period martingale transport, `u` eliminated, `v₀ = w₀ = g₀ = h₀₀ = 0`.
///
/// Variables are ordered `v, w, g, h` with `h` row-major over `(x_i, y_j)`.
#[derive(Debug, Clone)]
pub struct MultiPeriodKernel<'a> {
    problem: &'a Problem,
    sizes: [usize; 3],
    mu: Vec<f64>,
    theta: Vec<f64>,
    nu: Vec<f64>,
    log_theta: Vec<f64>,
    log_nu: Vec<f64>,
    /// `y_s - x_r`, indexed `[r·N2 + s]`.
    a: Vec<f64>,
    /// `z_t - y_s`, indexed `[s·N3 + t]`.
    b: Vec<f64>,
    gauge: Gauge,
}

/// Per-slice partial sums of one evaluation; `p` sums to one within each `x_r`.
struct Pass {
    p: Vec<f64>,
    log_s: Vec<f64>,
    /// `Σ_t p_rst`, `[r·N2 + s]`.
    ps: Vec<f64>,
    /// `Σ_s p_rst`, `[r·N3 + t]`.
    pt: Vec<f64>,
    /// `Σ_s p_rst a_rs`, `[r·N3 + t]`.
    pta: Vec<f64>,
    /// `A_r = Σ_st p_rst a_rs`.
    am: Vec<f64>,
    /// `Σ_s P_rs a_rs²`.
    aa: Vec<f64>,
    /// `B_rs = Σ_t p_rst b_st` and `Σ_t p_rst b_st²`.
    bm: Vec<f64>,
    bb: Vec<f64>,
    /// `D̄_r = Σ_st p_rst c'_rst`.
    cbar: Vec<f64>,
    /// `Σ_t p c'` at `[r·N2 + s]`, `Σ_s p c'` at `[r·N3 + t]`.
    cs: Vec<f64>,
    ct: Vec<f64>,
    /// `Σ_st p a c'` and `Σ_t p b c'`.
    ca: Vec<f64>,
    cb: Vec<f64>,
}

impl<'a> MultiPeriodKernel<'a> {
    pub fn new(problem: &'a Problem) -> Result<Self> {
        if problem.family() != Family::MultiPeriodMartingale {
            return Err(Error::Unsupported(
                "multi-period kernel needs a multi-period martingale problem".into(),
            ));
        }
        check_gauge(problem, 4, "multi-period")?;
        let m = problem.marginals();
        let (x, y, z) = (m[0].scalars(), m[1].scalars(), m[2].scalars());
        let sizes = [x.len(), y.len(), z.len()];
        let a = x.iter().flat_map(|xr| y.iter().map(move |ys| ys - xr)).collect();
        let b = y.iter().flat_map(|ys| z.iter().map(move |zt| zt - ys)).collect();
        let [n1, n2, n3] = sizes;
        let total = n2 + n3 + n1 + n1 * n2;
        Ok(Self {
            problem,
            sizes,
            mu: m[0].weights().to_vec(),
            log_theta: m[1].weights().iter().map(|w| w.ln()).collect(),
            log_nu: m[2].weights().iter().map(|w| w.ln()).collect(),
            theta: m[1].weights().to_vec(),
            nu: m[2].weights().to_vec(),
            a,
            b,
            gauge: Gauge::new(total, &[0, n2, n2 + n3, n2 + n3 + n1]),
        })
    }

    fn offsets(&self) -> [usize; 4] {
        let [n1, n2, n3] = self.sizes;
        [0, n2, n2 + n3, n2 + n3 + n1]
    }

    fn pass(&self, x: &[f64], eps: f64, full_sums: bool) -> Result<Pass> {
        self.gauge.check(x)?;
        let full = self.gauge.expand(x);
        let [n1, n2, n3] = self.sizes;
        let [ov, ow, og, oh] = self.offsets();
        let (v, w, g, h) = (&full[ov..ow], &full[ow..og], &full[og..oh], &full[oh..]);
        let eta = self.problem.eta();
        let (c, dc) = self.problem.cost().value_and_derivative(eps);
        let block = n2 * n3;
        let mut p = vec![0.0; c.len()];
        let mut log_s = vec![0.0; n1];
        let mut ps = vec![0.0; n1 * n2];
        let mut pt = vec![0.0; n1 * n3];
        let mut pta = vec![0.0; n1 * n3];
        let mut am = vec![0.0; n1];
        let mut aa = vec![0.0; n1];
        let mut bm = vec![0.0; n1 * n2];
        let mut bb = vec![0.0; n1 * n2];
        let mut cbar = vec![0.0; n1];
        let mut cs = vec![0.0; n1 * n2];
        let mut ct = vec![0.0; n1 * n3];
        let mut ca = vec![0.0; n1];
        let mut cb = vec![0.0; n1 * n2];
        for r in 0..n1 {
            let base = r * block;
            let mut acc = LogSumExp::default();
            for s in 0..n2 {
                let rs = r * n2 + s;
                let head = (v[s] + g[r] * self.a[rs]) / eta + self.log_theta[s];
                for t in 0..n3 {
                    let idx = base + s * n3 + t;
                    let l = head + (w[t] + h[rs] * self.b[s * n3 + t] - c[idx]) / eta + self.log_nu[t];
                    p[idx] = l;
                    acc.push(l);
                }
            }
            let ls = acc.value();
            if !ls.is_finite() {
                return Err(Error::Overflow { eps });
            }
            log_s[r] = ls;
            for s in 0..n2 {
                let rs = r * n2 + s;
                let a = self.a[rs];
                for t in 0..n3 {
                    let idx = base + s * n3 + t;
                    let q = (p[idx] - ls).exp();
                    p[idx] = q;
                    let bst = self.b[s * n3 + t];
                    ps[rs] += q;
                    pt[r * n3 + t] += q;
                    bm[rs] += q * bst;
                    if full_sums {
                        let d = dc[idx];
                        pta[r * n3 + t] += q * a;
                        bb[rs] += q * bst * bst;
                        cbar[r] += q * d;
                        cs[rs] += q * d;
                        ct[r * n3 + t] += q * d;
                        ca[r] += q * a * d;
                        cb[rs] += q * bst * d;
                    }
                }
                am[r] += ps[rs] * a;
                aa[r] += ps[rs] * a * a;
            }
        }
        Ok(Pass {
            p,
            log_s,
            ps,
            pt,
            pta,
            am,
            aa,
            bm,
            bb,
            cbar,
            cs,
            ct,
            ca,
            cb,
        })
    }

    /// The eliminated potentials `u_r = -η log Σ_st e_rst`.
    pub fn eliminated(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let pass = self.pass(x, eps, false)?;
        Ok(pass.log_s.iter().map(|l| -self.problem.eta() * l).collect())
    }

    fn value_from(&self, x: &[f64], pass: &Pass) -> f64 {
        let full = self.gauge.expand(x);
        let [_, ow, og, _] = self.offsets();
        let linear: f64 = full[..ow].iter().zip(&self.theta).map(|(a, b)| a * b).sum::<f64>()
            + full[ow..og].iter().zip(&self.nu).map(|(a, b)| a * b).sum::<f64>();
        let logs: f64 = pass.log_s.iter().zip(&self.mu).map(|(l, w)| l * w).sum();
        -linear + self.problem.eta() * (logs + 1.0)
    }

    fn gradient_from(&self, pass: &Pass) -> Vec<f64> {
        let [n1, n2, n3] = self.sizes;
        let mut grad: Vec<f64> = self.theta.iter().chain(&self.nu).map(|w| -w).collect();
        for r in 0..n1 {
            for s in 0..n2 {
                grad[s] += self.mu[r] * pass.ps[r * n2 + s];
            }
            for t in 0..n3 {
                grad[n2 + t] += self.mu[r] * pass.pt[r * n3 + t];
            }
        }
        grad.extend((0..n1).map(|r| self.mu[r] * pass.am[r]));
        grad.extend((0..n1 * n2).map(|rs| self.mu[rs / n2] * pass.bm[rs]));
        self.gauge.restrict(&grad)
    }

    fn hessian_from(&self, pass: &Pass) -> DMatrix<f64> {
        let [n1, n2, n3] = self.sizes;
        let [_, ow, og, oh] = self.offsets();
        let total = oh + n1 * n2;
        let mut h = DMatrix::zeros(total, total);

        // v and w blocks: -Σ_r μ_r [P_r; R_r][P_r; R_r]ᵀ plus diagonals and the (v, w) marginal.
        let stacked = DMatrix::from_fn(n2 + n3, n1, |i, r| {
            let q = if i < n2 { pass.ps[r * n2 + i] } else { pass.pt[r * n3 + i - n2] };
            q * self.mu[r].sqrt()
        });
        h.view_mut((0, 0), (og, og))
            .copy_from(&(-(&stacked * stacked.transpose())));
        for r in 0..n1 {
            let mu = self.mu[r];
            for s in 0..n2 {
                h[(s, s)] += mu * pass.ps[r * n2 + s];
            }
            for t in 0..n3 {
                h[(ow + t, ow + t)] += mu * pass.pt[r * n3 + t];
            }
            let base = r * n2 * n3;
            for s in 0..n2 {
                for t in 0..n3 {
                    h[(ow + t, s)] += mu * pass.p[base + s * n3 + t];
                }
            }
        }

        for r in 0..n1 {
            let mu = self.mu[r];
            let gi = og + r;
            let a_bar = pass.am[r];
            // g against v, w and itself
            for s in 0..n2 {
                let rs = r * n2 + s;
                h[(gi, s)] = mu * pass.ps[rs] * (self.a[rs] - a_bar);
            }
            for t in 0..n3 {
                let rt = r * n3 + t;
                h[(gi, ow + t)] = mu * (pass.pta[rt] - pass.pt[rt] * a_bar);
            }
            h[(gi, gi)] = mu * (pass.aa[r] - a_bar * a_bar);

            let base = r * n2 * n3;
            for j in 0..n2 {
                let rj = r * n2 + j;
                let hi = oh + rj;
                let b_bar = pass.bm[rj];
                for s in 0..n2 {
                    let own = if s == j { b_bar } else { 0.0 };
                    h[(hi, s)] = mu * (own - pass.ps[r * n2 + s] * b_bar);
                }
                for t in 0..n3 {
                    let cell = pass.p[base + j * n3 + t] * self.b[j * n3 + t];
                    h[(hi, ow + t)] = mu * (cell - pass.pt[r * n3 + t] * b_bar);
                }
                h[(hi, gi)] = mu * (self.a[rj] - a_bar) * b_bar;
                for j2 in 0..=j {
                    let own = if j2 == j { pass.bb[rj] } else { 0.0 };
                    h[(hi, oh + r * n2 + j2)] = mu * (own - b_bar * pass.bm[r * n2 + j2]);
                }
            }
        }
        mirror_lower(&mut h);
        h / self.problem.eta()
    }

    fn mixed_from(&self, pass: &Pass) -> Vec<f64> {
        let [n1, n2, n3] = self.sizes;
        let mut mixed = vec![0.0; n2 + n3];
        for r in 0..n1 {
            let (mu, d) = (self.mu[r], pass.cbar[r]);
            for s in 0..n2 {
                let rs = r * n2 + s;
                mixed[s] -= mu * (pass.cs[rs] - pass.ps[rs] * d);
            }
            for t in 0..n3 {
                let rt = r * n3 + t;
                mixed[n2 + t] -= mu * (pass.ct[rt] - pass.pt[rt] * d);
            }
        }
        mixed.extend((0..n1).map(|r| -self.mu[r] * (pass.ca[r] - pass.am[r] * pass.cbar[r])));
        mixed.extend((0..n1 * n2).map(|rs| {
            let r = rs / n2;
            -self.mu[r] * (pass.cb[rs] - pass.bm[rs] * pass.cbar[r])
        }));
        let inv_eta = 1.0 / self.problem.eta();
        for m in &mut mixed {
            *m *= inv_eta;
        }
        self.gauge.restrict(&mixed)
    }
}

impl DualModel for MultiPeriodKernel<'_> {
    fn problem(&self) -> &Problem {
        self.problem
    }

    fn name(&self) -> &'static str {
        "multi_period_martingale"
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
        let pass = self.pass(x, eps, true)?;
        Ok(LocalModel {
            value: self.value_from(x, &pass),
            gradient: self.gradient_from(&pass),
            hessian: self.gauge.restrict_matrix(&self.hessian_from(&pass)),
            mixed: self.mixed_from(&pass),
        })
    }

    fn coupling(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let pass = self.pass(x, eps, false)?;
        let block = self.sizes[1] * self.sizes[2];
        Ok(pass.p.iter().enumerate().map(|(idx, p)| p * self.mu[idx / block]).collect())
    }

    fn to_generic(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        let mut parent = self.eliminated(x, eps)?;
        parent.extend(self.gauge.expand(x));
        Ok(self.problem.system().fold(&parent))
    }

    fn from_generic(&self, phi: &[f64], _eps: f64) -> Result<Vec<f64>> {
        let n1 = self.sizes[0];
        let pinned: Vec<usize> = self.offsets().iter().map(|o| n1 + o).collect();
        let parent = parent_in_gauge(self.problem, phi, &pinned)?;
        Ok(self.gauge.restrict(&parent[n1..]))
    }

    fn eps_partial(&self, x: &[f64], eps: f64) -> Result<f64> {
        let pass = self.pass(x, eps, true)?;
        Ok(-pass.cbar.iter().zip(&self.mu).map(|(c, w)| c * w).sum::<f64>())
    }
}
