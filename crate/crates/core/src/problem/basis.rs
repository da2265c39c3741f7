use crate::error::{Error, Result};

/// A vector over the grid stored by its nonzero entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut v = Self::default();
        for (i, &x) in dense.iter().enumerate() {
            if x != 0.0 {
                v.indices.push(i);
                v.values.push(x);
            }
        }
        v
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&i, &x) in self.indices.iter().zip(&self.values) {
            out[i] = x;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &x)| x * dense[i]).sum()
    }
}

/// Spanning vectors `q¹..q^K` of the extra constraint subspace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintBasis {
    len: usize,
    vectors: Vec<SparseVector>,
    labels: Vec<String>,
}

impl ConstraintBasis {
    /// No extra constraints over a grid of `len` cells.
    pub fn empty(len: usize) -> Self {
        Self {
            len,
            vectors: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_dense(len: usize, vectors: &[Vec<f64>], labels: Vec<String>) -> Result<Self> {
        if let Some(v) = vectors.iter().find(|v| v.len() != len) {
            return Err(Error::InconsistentBasis(format!(
                "basis vector has length {} but the grid has {len} cells",
                v.len()
            )));
        }
        let sparse = vectors.iter().map(|v| SparseVector::from_dense(v)).collect();
        Self::from_sparse(len, sparse, labels)
    }

    pub fn from_sparse(len: usize, vectors: Vec<SparseVector>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != vectors.len() {
            return Err(Error::InconsistentBasis(format!(
                "{} labels for {} vectors",
                labels.len(),
                vectors.len()
            )));
        }
        for v in &vectors {
            if v.indices.len() != v.values.len() || v.indices.iter().any(|&i| i >= len) {
                return Err(Error::InconsistentBasis(format!("basis vector exceeds grid of {len} cells")));
            }
            if v.values.iter().any(|x| !x.is_finite()) {
                return Err(Error::InconsistentBasis("non-finite basis entry".into()));
            }
        }
        Ok(Self { len, vectors, labels })
    }

    /// Grid length `m` the vectors live on.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Number of vectors `K`.
    pub fn count(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[SparseVector] {
        &self.vectors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}
