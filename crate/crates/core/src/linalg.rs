//! Small numerical helpers shared by the objectives and solvers.

use faer::prelude::SpSolver;
use faer::Side;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Stable `log Σ exp(x_i)`; `-∞` for an empty slice.
pub fn logsumexp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Running max-shifted accumulator of `Σ exp(x_i)`.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    #[inline]
    pub fn push(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

pub fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Relative error `|a - b| / max(|b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Largest elementwise difference relative to the largest entry of `b`.
pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let scale = inf_norm(b).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    rel_err_vec(a.as_slice(), b.as_slice())
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub struct SpdFactor {
    matrix: DMatrix<f64>,
    chol: faer::linalg::solvers::Cholesky<f64>,
    jitter: f64,
}

impl SpdFactor {
    /// Factors `h`, retrying once with a diagonal jitter of `1e-12·trace/n`.
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::HessianIndefinite);
        }
        match factor(&h) {
            Some(chol) => Ok(Self {
                matrix: h,
                chol,
                jitter: 0.0,
            }),
            None => {
                let jitter = 1e-12 * h.trace() / n.max(1) as f64;
                let mut shifted = h;
                for i in 0..n {
                    shifted[(i, i)] += jitter;
                }
                let chol = factor(&shifted).ok_or(Error::HessianIndefinite)?;
                Ok(Self {
                    matrix: shifted,
                    chol,
                    jitter,
                })
            }
        }
    }

    /// Diagonal shift applied to get a factorization; zero when none was needed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn raw_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = faer::Col::<f64>::from_fn(rhs.len(), |i| rhs[i]);
        self.chol.solve_in_place(x.as_mut());
        (0..rhs.len()).map(|i| x[i]).collect()
    }

    /// Solves `H x = rhs` with up to three rounds of iterative refinement.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = self.raw_solve(rhs);
        let target = 1e-12 * inf_norm(rhs);
        for _ in 0..3 {
            let r = self.residual(&x, rhs);
            if inf_norm(&r) <= target {
                break;
            }
            let dx = self.raw_solve(&r);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        x
    }

    /// `rhs - H x` for the factored matrix.
    pub fn residual(&self, x: &[f64], rhs: &[f64]) -> Vec<f64> {
        let hx = &self.matrix * DVector::from_column_slice(x);
        rhs.iter().zip(hx.iter()).map(|(b, v)| b - v).collect()
    }
}

fn factor(h: &DMatrix<f64>) -> Option<faer::linalg::solvers::Cholesky<f64>> {
    let n = h.nrows();
    let view = faer::mat::from_column_major_slice::<f64, _, _>(h.as_slice(), n, n);
    view.cholesky(Side::Lower).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_naive() {
        let x = [0.3, -1.2, 2.5, 0.0];
        let naive: f64 = x.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        assert!((logsumexp(&x) - naive).abs() < 1e-14);
        let mut acc = LogSumExp::default();
        for v in x {
            acc.push(v);
        }
        assert!((acc.value() - naive).abs() < 1e-14);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn logsumexp_survives_large_exponents() {
        let x = [1000.0, 1000.0];
        assert!((logsumexp(&x) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn spd_solve_matches_dense_lu() {
        let a = DMatrix::from_fn(6, 6, |i, j| ((i * 5 + j * 3) % 7) as f64 / 7.0);
        let h = &a * a.transpose() + DMatrix::identity(6, 6) * 0.1;
        let rhs: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let f = SpdFactor::new(h.clone()).unwrap();
        assert_eq!(f.jitter(), 0.0);
        let x = f.solve(&rhs);
        let oracle = h.lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        assert!(rel_err_vec(&x, oracle.as_slice()) < 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(SpdFactor::new(h), Err(Error::HessianIndefinite)));
    }
}
