//! Reduced dual objectives with one potential block eliminated in closed form.
//!
//! Every kernel has the shape `Φ̄(x) = -b̃ᵀx + η Σ_r κ_r log S_r(x) + η`, where the
//! sum runs over the slices `r` of the eliminated block. Its Hessian and mixed
//! derivative are weighted covariances of the retained features within each slice.

mod eliminated;
mod martingale;
mod multi_period;
mod three_marginal;
mod two_marginal;

pub use eliminated::EliminatedDual;
pub use martingale::MartingaleKernel;
pub use multi_period::MultiPeriodKernel;
pub use three_marginal::ThreeMarginalKernel;
pub use two_marginal::TwoMarginalKernel;

use nalgebra::DMatrix;

use crate::dual::{DualModel, GenericDual};
use crate::error::{Error, Result};
use crate::problem::{Family, Problem};

/// The structured model of a problem's family, or the generic objective.
pub fn model_for(problem: &Problem, generic: bool) -> Result<Box<dyn DualModel + '_>> {
    if generic {
        return Ok(Box::new(GenericDual::new(problem)));
    }
    Ok(match problem.family() {
        Family::TwoMarginal => Box::new(TwoMarginalKernel::new(problem)?),
        Family::ThreeMarginal => Box::new(ThreeMarginalKernel::new(problem)?),
        Family::Martingale => Box::new(MartingaleKernel::new(problem)?),
        Family::MultiPeriodMartingale => Box::new(MultiPeriodKernel::new(problem)?),
        Family::Geodesic | Family::Barycenter => Box::new(EliminatedDual::new(problem)?),
        Family::Generic => Box::new(GenericDual::new(problem)),
    })
}

/// Variables of a kernel before pinning: which ones are fixed to zero.
#[derive(Debug, Clone)]
pub(crate) struct Gauge {
    total: usize,
    retained: Vec<usize>,
    position: Vec<Option<usize>>,
}

impl Gauge {
    pub(crate) fn new(total: usize, pinned: &[usize]) -> Self {
        let retained: Vec<usize> = (0..total).filter(|i| !pinned.contains(i)).collect();
        let mut position = vec![None; total];
        for (k, &i) in retained.iter().enumerate() {
            position[i] = Some(k);
        }
        Self {
            total,
            retained,
            position,
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.retained.len()
    }

    pub(crate) fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }

    pub(crate) fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.total];
        for (&i, &v) in self.retained.iter().zip(x) {
            full[i] = v;
        }
        full
    }

    pub(crate) fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.retained.iter().map(|&i| full[i]).collect()
    }

    pub(crate) fn restrict_matrix(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |a, b| full[(self.retained[a], self.retained[b])])
    }

    #[allow(dead_code)]
    pub(crate) fn position(&self, i: usize) -> Option<usize> {
        self.position[i]
    }
}

/// Moves generic potentials to a kernel gauge: pins `pinned` unreduced columns to zero.
pub(crate) fn parent_in_gauge(problem: &Problem, phi: &[f64], pinned: &[usize]) -> Result<Vec<f64>> {
    let sys = problem.system();
    if phi.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: phi.len(),
        });
    }
    sys.regauge(&sys.embed(phi), pinned)
}

/// Checks that the reduction left exactly as many gauge freedoms as the kernel pins.
pub(crate) fn check_gauge(problem: &Problem, pinned: usize, family: &str) -> Result<()> {
    let dropped = problem.system().reduction().map_or(0, |r| r.dropped.len());
    if dropped == pinned {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "{family} kernel pins {pinned} potentials but the constraint system has {dropped} redundant columns"
        )))
    }
}

/// Symmetrizes by copying the lower triangle onto the upper one.
pub(crate) fn mirror_lower(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            h[(j, i)] = h[(i, j)];
        }
    }
}
