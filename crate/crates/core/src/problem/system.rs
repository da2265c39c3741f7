use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::basis::ConstraintBasis;
use super::grid::ProductGrid;
use super::marginal::DiscreteMarginal;
use crate::error::{Error, Result};

/// Relative Schur pivot below which a column counts as dependent on the kept ones.
pub const RANK_TOL: f64 = 1e-10;
/// Maximum relative residual of `[b_j; A_j]` reprojected onto the kept columns.
pub const REPROJECTION_TOL: f64 = 1e-9;

/// Compressed sparse rows of the `m × e` constraint matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    ncols: usize,
}

impl SparseRows {
    pub fn nrows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.ptr[r]..self.ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    #[inline]
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c as usize]).sum()
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows()).map(|r| self.row_dot(r, x)).collect()
    }

    /// `Aᵀ w`.
    pub fn tr_mul(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, &wr) in w.iter().enumerate() {
            if wr == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c as usize] += v * wr;
            }
        }
        out
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows())
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().position(|&c| c as usize == j).map_or(0.0, |k| vals[k])
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for r in 0..self.nrows() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(r, c as usize)] += v;
            }
        }
        m
    }

    /// Dense `AᵀA`, row-major.
    fn gram(&self) -> Vec<f64> {
        let e = self.ncols;
        let mut g = vec![0.0; e * e];
        for r in 0..self.nrows() {
            let (cols, vals) = self.row(r);
            for (&ca, &va) in cols.iter().zip(vals) {
                let base = ca as usize * e;
                for (&cb, &vb) in cols.iter().zip(vals) {
                    g[base + cb as usize] += va * vb;
                }
            }
        }
        g
    }

    fn select_columns(&self, kept: &[usize]) -> SparseRows {
        let mut map = vec![u32::MAX; self.ncols];
        for (k, &j) in kept.iter().enumerate() {
            map[j] = k as u32;
        }
        let mut ptr = Vec::with_capacity(self.ptr.len());
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        ptr.push(0);
        for r in 0..self.nrows() {
            let (rc, rv) = self.row(r);
            for (&c, &v) in rc.iter().zip(rv) {
                let k = map[c as usize];
                if k != u32::MAX {
                    cols.push(k);
                    vals.push(v);
                }
            }
            ptr.push(cols.len());
        }
        SparseRows {
            ptr,
            cols,
            vals,
            ncols: kept.len(),
        }
    }
}

/// Which potential a column of `A` multiplies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnLabel {
    /// Indicator of `point` in constrained marginal `marginal`.
    Marginal { marginal: usize, point: usize },
    /// Extra constraint vector `index` of the basis.
    Constraint { index: usize, name: String },
}

/// A column removed by rank reduction, expressed through the kept columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedColumn {
    /// Index among the unreduced columns.
    pub column: usize,
    /// `A_column = Σ_k coefficients[k]·Â_k` over the reduced columns.
    pub coefficients: Vec<f64>,
    /// Relative residual of the reprojection of `[b_j; A_j]`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub parent_columns: usize,
    /// Reduced column `k` is unreduced column `kept[k]`.
    pub kept: Vec<usize>,
    pub dropped: Vec<DroppedColumn>,
    /// Smallest relative Schur pivot among the kept columns.
    pub min_pivot: f64,
}

/// The constraint system `Aᵀγ = b` with `A = [B, C]`, `b = [μ, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: SparseRows,
    b: Vec<f64>,
    labels: Vec<ColumnLabel>,
    reduction: Option<Reduction>,
}

/// Assembles `A = [B, C]` and `b = [μ, 0]` on the product grid of `marginals`.
///
/// Free marginals contribute no indicator columns; their reference weight is handled
/// by the caller.
pub fn build_system(marginals: &[DiscreteMarginal], free: &[bool], basis: &ConstraintBasis) -> Result<LinearSystem> {
    if free.len() != marginals.len() {
        return Err(Error::DimensionMismatch {
            expected: marginals.len(),
            got: free.len(),
        });
    }
    if free.iter().all(|f| *f) {
        return Err(Error::InvalidMarginal("at least one marginal must be constrained".into()));
    }
    let sizes: Vec<usize> = marginals.iter().map(DiscreteMarginal::len).collect();
    let grid = ProductGrid::new(&sizes);
    let m = grid.len();
    if basis.len() != m {
        return Err(Error::InconsistentBasis(format!(
            "basis lives on {} cells but the grid has {m}",
            basis.len()
        )));
    }

    let mut labels = Vec::new();
    let mut b = Vec::new();
    let mut offsets = Vec::new();
    for (i, mu) in marginals.iter().enumerate() {
        if free[i] {
            continue;
        }
        offsets.push((i, labels.len()));
        for (point, &w) in mu.weights().iter().enumerate() {
            labels.push(ColumnLabel::Marginal { marginal: i, point });
            b.push(w);
        }
    }
    let n_b = labels.len();
    for (index, name) in basis.labels().iter().enumerate() {
        labels.push(ColumnLabel::Constraint {
            index,
            name: name.clone(),
        });
        b.push(0.0);
    }

    let mut counts = vec![offsets.len(); m];
    for v in basis.vectors() {
        for &r in &v.indices {
            counts[r] += 1;
        }
    }
    let mut ptr = Vec::with_capacity(m + 1);
    ptr.push(0);
    for c in &counts {
        ptr.push(ptr.last().unwrap() + c);
    }
    let nnz = *ptr.last().unwrap();
    let mut cols = vec![0u32; nnz];
    let mut vals = vec![0.0; nnz];
    let mut fill: Vec<usize> = ptr[..m].to_vec();
    for (r, slot) in fill.iter_mut().enumerate() {
        for &(axis, offset) in &offsets {
            cols[*slot] = (offset + grid.coord(r, axis)) as u32;
            vals[*slot] = 1.0;
            *slot += 1;
        }
    }
    for (j, v) in basis.vectors().iter().enumerate() {
        for (&r, &x) in v.indices.iter().zip(&v.values) {
            cols[fill[r]] = (n_b + j) as u32;
            vals[fill[r]] = x;
            fill[r] += 1;
        }
    }
    let a = SparseRows {
        ptr,
        cols,
        vals,
        ncols: labels.len(),
    };
    Ok(LinearSystem {
        a,
        b,
        labels,
        reduction: None,
    })
}

impl LinearSystem {
    pub fn rows(&self) -> &SparseRows {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn labels(&self) -> &[ColumnLabel] {
        &self.labels
    }

    /// Number of potentials `e`.
    pub fn dim(&self) -> usize {
        self.a.ncols
    }

    /// Number of grid cells `m`.
    pub fn cells(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_rank_reduced(&self) -> bool {
        self.reduction.is_some()
    }

    pub fn reduction(&self) -> Option<&Reduction> {
        self.reduction.as_ref()
    }

    /// Number of columns before reduction.
    pub fn parent_dim(&self) -> usize {
        self.reduction.as_ref().map_or(self.dim(), |r| r.parent_columns)
    }

    /// Drops dependent columns so that `A` has full column rank while `[bᵀ; A]` keeps
    /// its column space.
    ///
    /// Columns are scanned left to right (all of `B`, then `C`) and a column is kept
    /// when its Schur pivot against the kept ones exceeds [`RANK_TOL`]. Each dropped
    /// column is reprojected onto the kept ones and must reproduce its `b` entry.
    pub fn reduce_full_rank(&self) -> Result<LinearSystem> {
        let e = self.dim();
        let gram = self.a.gram();
        let scale: Vec<f64> = (0..e).map(|j| gram[j * e + j].sqrt()).collect();

        let mut kept: Vec<usize> = Vec::new();
        let mut factor: Vec<Vec<f64>> = Vec::new();
        let mut pending: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut min_pivot = f64::INFINITY;
        let mut y = Vec::with_capacity(e);
        for j in 0..e {
            if scale[j] == 0.0 {
                pending.push((j, vec![0.0; kept.len()]));
                continue;
            }
            y.clear();
            for (i, row) in factor.iter().enumerate() {
                let g = gram[kept[i] * e + j] / (scale[kept[i]] * scale[j]);
                let s: f64 = row[..i].iter().zip(&y).map(|(l, yk)| l * yk).sum();
                y.push((g - s) / row[i]);
            }
            let pivot = 1.0 - y.iter().map(|v| v * v).sum::<f64>();
            if pivot > RANK_TOL {
                min_pivot = min_pivot.min(pivot);
                let mut row = y.clone();
                row.push(pivot.sqrt());
                factor.push(row);
                kept.push(j);
            } else {
                let k = kept.len();
                let mut x = y.clone();
                for i in (0..k).rev() {
                    let s: f64 = ((i + 1)..k).map(|p| factor[p][i] * x[p]).sum();
                    x[i] = (x[i] - s) / factor[i][i];
                }
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi *= scale[j] / scale[kept[i]];
                }
                pending.push((j, x));
            }
        }

        let reduced_a = self.a.select_columns(&kept);
        let reduced_b: Vec<f64> = kept.iter().map(|&j| self.b[j]).collect();
        let mut dropped = Vec::with_capacity(pending.len());
        for (column, mut coefficients) in pending {
            coefficients.resize(kept.len(), 0.0);
            let residual = self.reprojection_residual(column, &reduced_a, &reduced_b, &coefficients);
            if !(residual <= REPROJECTION_TOL) {
                return Err(Error::ConstraintInconsistent {
                    column: describe(&self.labels[column]),
                    residual,
                });
            }
            dropped.push(DroppedColumn {
                column,
                coefficients,
                residual,
            });
        }

        let labels = kept.iter().map(|&j| self.labels[j].clone()).collect();
        let reduction = match &self.reduction {
            None => Reduction {
                parent_columns: e,
                kept,
                dropped,
                min_pivot,
            },
            Some(previous) if dropped.is_empty() => Reduction {
                min_pivot,
                ..previous.clone()
            },
            Some(_) => {
                return Err(Error::Unsupported(
                    "reduced system lost rank; rebuild from the unreduced system".into(),
                ))
            }
        };
        Ok(LinearSystem {
            a: reduced_a,
            b: reduced_b,
            labels,
            reduction: Some(reduction),
        })
    }

    fn reprojection_residual(&self, column: usize, kept_a: &SparseRows, kept_b: &[f64], x: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for r in 0..self.a.nrows() {
            let (cols, vals) = self.a.row(r);
            let own: f64 = cols
                .iter()
                .zip(vals)
                .filter(|(c, _)| **c as usize == column)
                .map(|(_, v)| *v)
                .sum();
            let diff = own - kept_a.row_dot(r, x);
            num += diff * diff;
            den += own * own;
        }
        let rb = self.b[column] - kept_b.iter().zip(x).map(|(b, c)| b * c).sum::<f64>();
        num += rb * rb;
        den += self.b[column] * self.b[column];
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    }

    /// Potentials of the unreduced system with dropped entries set to zero.
    pub fn embed(&self, phi: &[f64]) -> Vec<f64> {
        match &self.reduction {
            None => phi.to_vec(),
            Some(red) => {
                let mut out = vec![0.0; red.parent_columns];
                for (k, &j) in red.kept.iter().enumerate() {
                    out[j] = phi[k];
                }
                out
            }
        }
    }

    /// Reduced potentials generating the same `Aφ` and `bᵀφ` as unreduced `parent`.
    pub fn fold(&self, parent: &[f64]) -> Vec<f64> {
        match &self.reduction {
            None => parent.to_vec(),
            Some(red) => {
                let mut out: Vec<f64> = red.kept.iter().map(|&j| parent[j]).collect();
                for d in &red.dropped {
                    let t = parent[d.column];
                    if t != 0.0 {
                        for (o, c) in out.iter_mut().zip(&d.coefficients) {
                            *o += t * c;
                        }
                    }
                }
                out
            }
        }
    }

    /// Basis of the null space of the unreduced `A`, one vector per dropped column.
    pub fn null_basis(&self) -> Vec<Vec<f64>> {
        let Some(red) = &self.reduction else {
            return Vec::new();
        };
        red.dropped
            .iter()
            .map(|d| {
                let mut n = vec![0.0; red.parent_columns];
                n[d.column] = 1.0;
                for (k, &j) in red.kept.iter().enumerate() {
                    n[j] -= d.coefficients[k];
                }
                n
            })
            .collect()
    }

    /// Moves unreduced potentials along the null space of `A` so that the `pinned`
    /// entries vanish. Requires one pinned column per dropped column.
    pub fn regauge(&self, parent: &[f64], pinned: &[usize]) -> Result<Vec<f64>> {
        let basis = self.null_basis();
        if basis.len() != pinned.len() {
            return Err(Error::Unsupported(format!(
                "gauge has {} degrees of freedom but {} entries are pinned",
                basis.len(),
                pinned.len()
            )));
        }
        if basis.is_empty() {
            return Ok(parent.to_vec());
        }
        let k = basis.len();
        let mat = DMatrix::from_fn(k, k, |p, d| basis[d][pinned[p]]);
        let rhs = DVector::from_iterator(k, pinned.iter().map(|&p| -parent[p]));
        let t = mat
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Unsupported("pinned entries do not fix the gauge".into()))?;
        let mut out = parent.to_vec();
        for (d, n) in basis.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(n) {
                *o += t[d] * v;
            }
        }
        for &p in pinned {
            out[p] = 0.0;
        }
        Ok(out)
    }

    /// Ratio of extreme singular values of `A` from a dense SVD; for small systems.
    pub fn singular_value_ratio(&self) -> f64 {
        let sv = self.a.to_dense().singular_values();
        let max = sv.max();
        let min = sv.min();
        if max == 0.0 {
            0.0
        } else {
            min / max
        }
    }

    /// `Aᵀγ - b`.
    pub fn residual(&self, gamma: &[f64]) -> Vec<f64> {
        let mut r = self.a.tr_mul(gamma);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        r
    }
}

fn describe(label: &ColumnLabel) -> String {
    match label {
        ColumnLabel::Marginal { marginal, point } => format!("marginal {marginal} point {point}"),
        ColumnLabel::Constraint { index, name } if name.is_empty() => format!("constraint {index}"),
        ColumnLabel::Constraint { name, .. } => name.clone(),
    }
}
