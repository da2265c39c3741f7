//! Marginals, grids, cost paths and the constraint system of a transport problem.

mod basis;
mod cost;
mod grid;
mod marginal;
mod system;

pub use basis::{ConstraintBasis, SparseVector};
pub use cost::{CostPath, WeightPath};
pub use grid::ProductGrid;
pub use marginal::{linspace, DiscreteMarginal};
pub use system::{build_system, ColumnLabel, DroppedColumn, LinearSystem, Reduction, SparseRows, RANK_TOL, REPROJECTION_TOL};

use crate::error::{Error, Result};

/// Which structured kernel, if any, applies to a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Arbitrary marginals and constraint basis.
    Generic,
    TwoMarginal,
    ThreeMarginal,
    /// Two marginals with the one-period martingale basis.
    Martingale,
    /// Three marginals with the two-period martingale basis.
    MultiPeriodMartingale,
    /// Endpoint marginals around a free middle marginal.
    Geodesic,
    /// Constrained marginals followed by one free marginal.
    Barycenter,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Generic => "generic",
            Family::TwoMarginal => "two_marginal",
            Family::ThreeMarginal => "three_marginal",
            Family::Martingale => "martingale",
            Family::MultiPeriodMartingale => "multi_period_martingale",
            Family::Geodesic => "geodesic",
            Family::Barycenter => "barycenter",
        }
    }
}

/// An assembled entropic transport problem.
#[derive(Debug, Clone)]
pub struct Problem {
    marginals: Vec<DiscreteMarginal>,
    free: Vec<bool>,
    grid: ProductGrid,
    cost: CostPath,
    basis: ConstraintBasis,
    eta: f64,
    family: Family,
    log_reference: Vec<f64>,
    system: LinearSystem,
}

impl Problem {
    /// Assembles and rank-reduces the constraint system.
    pub fn new(
        marginals: Vec<DiscreteMarginal>,
        free: Vec<bool>,
        cost: CostPath,
        basis: ConstraintBasis,
        eta: f64,
    ) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Unsupported(format!("eta must be positive, got {eta}")));
        }
        let sizes: Vec<usize> = marginals.iter().map(DiscreteMarginal::len).collect();
        let grid = ProductGrid::new(&sizes);
        if cost.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: cost.len(),
            });
        }
        let system = build_system(&marginals, &free, &basis)?.reduce_full_rank()?;
        let log_reference = reference_log_weights(&marginals, &free, &grid);
        Ok(Self {
            marginals,
            free,
            grid,
            cost,
            basis,
            eta,
            family: Family::Generic,
            log_reference,
            system,
        })
    }

    /// Tags the problem with a structured family after checking its shape.
    pub fn with_family(mut self, family: Family) -> Result<Self> {
        let n = self.marginals.len();
        let constrained = self.free.iter().filter(|f| !**f).count();
        let k = self.basis.count();
        let ok = match family {
            Family::Generic => true,
            Family::TwoMarginal => n == 2 && constrained == 2 && k == 0,
            Family::ThreeMarginal => n == 3 && constrained == 3 && k == 0,
            Family::Martingale => n == 2 && constrained == 2 && k == self.marginals[0].len(),
            Family::MultiPeriodMartingale => {
                n == 3 && constrained == 3 && k == self.marginals[0].len() * (1 + self.marginals[1].len())
            }
            Family::Geodesic => n == 3 && self.free == [false, true, false] && k == 0,
            Family::Barycenter => n >= 2 && self.free.last() == Some(&true) && constrained == n - 1 && k == 0,
        };
        if !ok {
            return Err(Error::Unsupported(format!(
                "problem shape does not match the {} family",
                family.name()
            )));
        }
        self.family = family;
        Ok(self)
    }

    pub fn marginals(&self) -> &[DiscreteMarginal] {
        &self.marginals
    }

    pub fn free(&self) -> &[bool] {
        &self.free
    }

    pub fn grid(&self) -> &ProductGrid {
        &self.grid
    }

    pub fn cost(&self) -> &CostPath {
        &self.cost
    }

    pub fn basis(&self) -> &ConstraintBasis {
        &self.basis
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Same problem at another regularization strength.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Unsupported(format!("eta must be positive, got {eta}")));
        }
        Ok(Self { eta, ..self.clone() })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// `log 𝛍_ℓ` of the reference product measure, free marginals uniform.
    pub fn log_reference(&self) -> &[f64] {
        &self.log_reference
    }

    /// The rank-reduced constraint system.
    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn has_free_marginals(&self) -> bool {
        self.free.iter().any(|f| *f)
    }

    /// Number of grid cells `m`.
    pub fn cells(&self) -> usize {
        self.grid.len()
    }

    /// Marginal `axis` of a grid vector.
    pub fn marginal_of(&self, gamma: &[f64], axis: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.sizes()[axis]];
        for (l, g) in gamma.iter().enumerate() {
            out[self.grid.coord(l, axis)] += g;
        }
        out
    }

    /// Regularized primal value `c(ε)ᵀγ + η Σ γ log(γ/𝛍)`.
    pub fn primal_value(&self, gamma: &[f64], eps: f64) -> f64 {
        let c = self.cost.value(eps);
        let mut transport = 0.0;
        let mut entropy = 0.0;
        for ((g, cl), lr) in gamma.iter().zip(&c).zip(&self.log_reference) {
            transport += cl * g;
            if *g > 0.0 {
                entropy += g * (g.ln() - lr);
            }
        }
        transport + self.eta * entropy
    }

    /// Relative entropy `Σ γ log(γ/𝛍)` with respect to the reference measure.
    pub fn relative_entropy(&self, gamma: &[f64]) -> f64 {
        gamma
            .iter()
            .zip(&self.log_reference)
            .filter(|(g, _)| **g > 0.0)
            .map(|(g, lr)| g * (g.ln() - lr))
            .sum()
    }
}

fn reference_log_weights(marginals: &[DiscreteMarginal], free: &[bool], grid: &ProductGrid) -> Vec<f64> {
    let logs: Vec<Vec<f64>> = marginals
        .iter()
        .zip(free)
        .map(|(mu, &f)| {
            if f {
                vec![-(mu.len() as f64).ln(); mu.len()]
            } else {
                mu.weights().iter().map(|w| w.ln()).collect()
            }
        })
        .collect();
    let mut out = vec![0.0; grid.len()];
    // Row-major with the first marginal slowest: the last axis repeats fastest.
    let mut block = 1;
    for (axis, lw) in logs.iter().enumerate().rev() {
        let n = grid.sizes()[axis];
        for (l, o) in out.iter_mut().enumerate() {
            *o += lw[(l / block) % n];
        }
        block *= n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_weights_are_products() {
        let a = DiscreteMarginal::from_scalars(&[0.0, 1.0], &[0.25, 0.75]).unwrap();
        let b = DiscreteMarginal::from_scalars(&[0.0, 1.0, 2.0], &[0.2, 0.3, 0.5]).unwrap();
        let cost = CostPath::scaled(vec![0.0; 6]);
        let p = Problem::new(vec![a.clone(), b.clone()], vec![false, false], cost, ConstraintBasis::empty(6), 1.0).unwrap();
        for l in 0..6 {
            let mi = p.grid().unflatten(l);
            let expected = a.weights()[mi[0]] * b.weights()[mi[1]];
            assert!((p.log_reference()[l].exp() - expected).abs() < 1e-15);
        }
        let total: f64 = p.log_reference().iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn free_marginal_is_uniform_in_reference() {
        let a = DiscreteMarginal::from_scalars(&[0.0, 1.0], &[0.25, 0.75]).unwrap();
        let z = DiscreteMarginal::from_scalars(&[0.0, 0.5, 1.0], &[0.7, 0.2, 0.1]).unwrap();
        let cost = CostPath::scaled(vec![0.0; 6]);
        let p = Problem::new(vec![a, z], vec![false, true], cost, ConstraintBasis::empty(6), 1.0).unwrap();
        assert!((p.log_reference()[1].exp() - 0.25 / 3.0).abs() < 1e-15);
        assert_eq!(p.system().dim(), 2);
    }

    #[test]
    fn rejects_bad_eta_and_cost_length() {
        let a = DiscreteMarginal::uniform_grid(0.0, 1.0, 2).unwrap();
        let bad = Problem::new(
            vec![a.clone(), a.clone()],
            vec![false, false],
            CostPath::scaled(vec![0.0; 4]),
            ConstraintBasis::empty(4),
            0.0,
        );
        assert!(bad.is_err());
        let bad = Problem::new(
            vec![a.clone(), a],
            vec![false, false],
            CostPath::scaled(vec![0.0; 3]),
            ConstraintBasis::empty(4),
            1.0,
        );
        assert!(matches!(bad, Err(Error::DimensionMismatch { .. })));
    }
}
