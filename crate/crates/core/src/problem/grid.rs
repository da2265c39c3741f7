/// Row-major product of finite index sets, first marginal slowest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductGrid {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl ProductGrid {
    pub fn new(sizes: &[usize]) -> Self {
        let mut strides = vec![1; sizes.len()];
        for axis in (0..sizes.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * sizes[axis + 1];
        }
        let len = sizes.iter().product();
        Self {
            sizes: sizes.to_vec(),
            strides,
            len,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Total number of cells `m`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn arity(&self) -> usize {
        self.sizes.len()
    }

    pub fn flatten(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.sizes.len());
        index.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn unflatten(&self, flat: usize) -> Vec<usize> {
        (0..self.sizes.len()).map(|axis| self.coord(flat, axis)).collect()
    }

    /// Coordinate of `flat` along one axis.
    #[inline]
    pub fn coord(&self, flat: usize, axis: usize) -> usize {
        (flat / self.strides[axis]) % self.sizes[axis]
    }
}
