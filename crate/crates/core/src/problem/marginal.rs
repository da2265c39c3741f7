use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-12;

/// A probability measure with finitely many atoms in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMarginal {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMarginal {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMarginal("empty support".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidMarginal(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidMarginal("points must share a positive dimension".into()));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMarginal("non-finite support point".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMarginal(format!("weight {w} is not positive")));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMarginal(format!("total mass {mass} differs from 1")));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            points[a]
                .iter()
                .zip(&points[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        if order.windows(2).any(|w| points[w[0]] == points[w[1]]) {
            return Err(Error::InvalidMarginal("support points must be distinct".into()));
        }
        Ok(Self { points, weights })
    }

    /// Uniform weights on the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len().max(1);
        Self::new(points, vec![1.0 / n as f64; n])
    }

    /// One-dimensional measure from scalar atoms.
    pub fn from_scalars(points: &[f64], weights: &[f64]) -> Result<Self> {
        Self::new(points.iter().map(|&x| vec![x]).collect(), weights.to_vec())
    }

    /// Uniform measure on `n` evenly spaced points of `[lo, hi]`.
    pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::uniform(linspace(lo, hi, n).into_iter().map(|x| vec![x]).collect())
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::new(vec![point], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    /// First coordinate of every atom; the natural view for 1-D measures.
    pub fn scalars(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[0]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (acc, x) in m.iter_mut().zip(p) {
                *acc += w * x;
            }
        }
        m
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| lo + step * i as f64).collect()
        }
    }
}
