use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type WeightFn = dyn Fn(f64) -> (Vec<f64>, Vec<f64>) + Send + Sync;

/// Convex weights `λ(ε)` of a barycenter cost, together with `λ'(ε)`.
#[derive(Clone)]
pub enum WeightPath {
    /// `λ(ε) = (1 - ε)·from + ε·to`.
    Linear { from: Vec<f64>, to: Vec<f64> },
    /// Arbitrary differentiable path returning `(λ(ε), λ'(ε))`.
    Custom { arity: usize, eval: Arc<WeightFn> },
}

impl WeightPath {
    pub fn linear(from: Vec<f64>, to: Vec<f64>) -> Self {
        Self::Linear { from, to }
    }

    pub fn custom<F>(arity: usize, eval: F) -> Self
    where
        F: Fn(f64) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    {
        Self::Custom {
            arity,
            eval: Arc::new(eval),
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Self::Linear { from, .. } => from.len(),
            Self::Custom { arity, .. } => *arity,
        }
    }

    pub fn eval(&self, eps: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Linear { from, to } => {
                let value = from.iter().zip(to).map(|(a, b)| (1.0 - eps) * a + eps * b).collect();
                let slope = from.iter().zip(to).map(|(a, b)| b - a).collect();
                (value, slope)
            }
            Self::Custom { eval, .. } => eval(eps),
        }
    }

    /// Checks nonnegativity and unit sum of `λ(ε)` at every sampled `ε`.
    pub fn validate(&self, eps_samples: &[f64]) -> Result<()> {
        for &eps in eps_samples {
            let (lambda, slope) = self.eval(eps);
            let reason = if lambda.len() != self.arity() || slope.len() != self.arity() {
                Some("wrong number of weights".to_string())
            } else if lambda.iter().any(|l| *l < -1e-12 || !l.is_finite()) {
                Some("negative weight".to_string())
            } else if (lambda.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                Some("weights do not sum to 1".to_string())
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(Error::InvalidWeightPath { eps, reason });
            }
        }
        Ok(())
    }
}

impl fmt::Debug for WeightPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { from, to } => f.debug_struct("Linear").field("from", from).field("to", to).finish(),
            Self::Custom { arity, .. } => f.debug_struct("Custom").field("arity", arity).finish_non_exhaustive(),
        }
    }
}

/// An ε-dependent cost vector over the product grid.
#[derive(Debug, Clone)]
pub enum CostPath {
    /// `c(ε) = base + ε·slope`.
    Affine { base: Vec<f64>, slope: Vec<f64> },
    /// `c(ε) = Σ_i λ_i(ε)·components[i]`.
    Mixture { components: Vec<Vec<f64>>, weights: WeightPath },
}

impl CostPath {
    /// The standard path `ε·c`.
    pub fn scaled(cost: Vec<f64>) -> Self {
        Self::Affine {
            base: vec![0.0; cost.len()],
            slope: cost,
        }
    }

    pub fn affine(base: Vec<f64>, slope: Vec<f64>) -> Result<Self> {
        if base.len() != slope.len() {
            return Err(Error::DimensionMismatch {
                expected: base.len(),
                got: slope.len(),
            });
        }
        Ok(Self::Affine { base, slope })
    }

    pub fn mixture(components: Vec<Vec<f64>>, weights: WeightPath) -> Result<Self> {
        let len = components.first().map_or(0, Vec::len);
        if let Some(bad) = components.iter().find(|c| c.len() != len) {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: bad.len(),
            });
        }
        if components.len() != weights.arity() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: weights.arity(),
            });
        }
        Ok(Self::Mixture { components, weights })
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Affine { slope, .. } => slope.len(),
            Self::Mixture { components, .. } => components.first().map_or(0, Vec::len),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when `c(0) ≡ 0`, i.e. the path is `ε·c`.
    pub fn vanishes_at_zero(&self) -> bool {
        match self {
            Self::Affine { base, .. } => base.iter().all(|c| *c == 0.0),
            Self::Mixture { .. } => self.value(0.0).iter().all(|c| *c == 0.0),
        }
    }

    pub fn value(&self, eps: f64) -> Vec<f64> {
        match self {
            Self::Affine { base, slope } => base.iter().zip(slope).map(|(b, s)| b + eps * s).collect(),
            Self::Mixture { components, weights } => {
                let (lambda, _) = weights.eval(eps);
                combine(components, &lambda)
            }
        }
    }

    pub fn derivative(&self, eps: f64) -> Vec<f64> {
        match self {
            Self::Affine { slope, .. } => slope.clone(),
            Self::Mixture { components, weights } => {
                let (_, dlambda) = weights.eval(eps);
                combine(components, &dlambda)
            }
        }
    }

    /// Value and derivative in one pass over the weight path.
    pub fn value_and_derivative(&self, eps: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Affine { .. } => (self.value(eps), self.derivative(eps)),
            Self::Mixture { components, weights } => {
                let (lambda, dlambda) = weights.eval(eps);
                (combine(components, &lambda), combine(components, &dlambda))
            }
        }
    }

    /// The slope of an affine path; `None` for mixtures.
    pub fn affine_slope(&self) -> Option<&[f64]> {
        match self {
            Self::Affine { slope, .. } => Some(slope),
            Self::Mixture { .. } => None,
        }
    }
}

fn combine(components: &[Vec<f64>], lambda: &[f64]) -> Vec<f64> {
    let len = components.first().map_or(0, Vec::len);
    let mut out = vec![0.0; len];
    for (comp, &l) in components.iter().zip(lambda) {
        if l == 0.0 {
            continue;
        }
        for (o, c) in out.iter_mut().zip(comp) {
            *o += l * c;
        }
    }
    out
}
