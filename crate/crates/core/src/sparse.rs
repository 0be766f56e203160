//! Compressed sparse row storage for boolean matrices.

use alloc::vec;
use alloc::vec::Vec;
use fixedbitset::FixedBitSet;

use crate::error::arg_err;
use crate::Result;

/// Boolean matrix in CSR layout. Column indices within a row are sorted and
/// unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolCsr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl BoolCsr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BoolCsr { rows, cols, indptr: vec![0; rows + 1], indices: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        BoolCsr { rows: n, cols: n, indptr: (0..=n).collect(), indices: (0..n).collect() }
    }

    /// Builds from (row, col) pairs; duplicates collapse.
    pub fn from_pairs(rows: usize, cols: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); rows];
        for &(r, c) in pairs {
            if r >= rows || c >= cols {
                return Err(arg_err!("entry ({r}, {c}) outside {rows}x{cols} matrix"));
            }
            buckets[r].push(c);
        }
        Ok(Self::from_row_lists(rows, cols, buckets))
    }

    fn from_row_lists(rows: usize, cols: usize, lists: Vec<Vec<usize>>) -> Self {
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            indices.extend_from_slice(&l);
            indptr.push(indices.len());
        }
        BoolCsr { rows, cols, indptr, indices }
    }

    fn from_bitset_rows(rows: usize, cols: usize, sets: impl Iterator<Item = FixedBitSet>) -> Self {
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for s in sets {
            indices.extend(s.ones());
            indptr.push(indices.len());
        }
        BoolCsr { rows, cols, indptr, indices }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn row_bitset(&self, r: usize) -> FixedBitSet {
        let mut s = FixedBitSet::with_capacity(self.cols);
        for &c in self.row(r) {
            s.insert(c);
        }
        s
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        r < self.rows && self.row(r).binary_search(&c).is_ok()
    }

    /// All set entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c)))
    }

    pub fn transpose(&self) -> Self {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); self.cols];
        for (r, c) in self.iter() {
            lists[c].push(r);
        }
        Self::from_row_lists(self.cols, self.rows, lists)
    }

    /// Boolean product `self · other`.
    pub fn matmul(&self, other: &BoolCsr) -> Result<Self> {
        if self.cols != other.rows {
            return Err(arg_err!(
                "boolean matmul shape mismatch: {}x{} by {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let rows = (0..self.rows).map(|r| {
            let mut acc = FixedBitSet::with_capacity(other.cols);
            for &k in self.row(r) {
                for &c in other.row(k) {
                    acc.insert(c);
                }
            }
            acc
        });
        Ok(Self::from_bitset_rows(self.rows, other.cols, rows))
    }

    /// Elementwise OR.
    pub fn or(&self, other: &BoolCsr) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(arg_err!("boolean or shape mismatch: {:?} vs {:?}", self.shape(), other.shape()));
        }
        let lists = (0..self.rows)
            .map(|r| {
                let mut l: Vec<usize> = self.row(r).to_vec();
                l.extend_from_slice(other.row(r));
                l
            })
            .collect();
        Ok(Self::from_row_lists(self.rows, self.cols, lists))
    }

    /// Entries of `self` that are not set in `other`.
    pub fn and_not(&self, other: &BoolCsr) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(arg_err!("boolean and_not shape mismatch: {:?} vs {:?}", self.shape(), other.shape()));
        }
        let lists = (0..self.rows)
            .map(|r| self.row(r).iter().copied().filter(|&c| !other.get(r, c)).collect())
            .collect();
        Ok(Self::from_row_lists(self.rows, self.cols, lists))
    }

    pub fn without_diagonal(&self) -> Self {
        let lists = (0..self.rows)
            .map(|r| self.row(r).iter().copied().filter(|&c| c != r).collect())
            .collect();
        Self::from_row_lists(self.rows, self.cols, lists)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.iter().all(|(r, c)| self.get(c, r))
    }

    /// Degree (row popcount) of every row.
    pub fn row_counts(&self) -> Vec<usize> {
        (0..self.rows).map(|r| self.indptr[r + 1] - self.indptr[r]).collect()
    }

    /// Set of columns reachable from `from` in one step: the union of the rows
    /// indexed by `from`.
    pub fn step(&self, from: &FixedBitSet) -> FixedBitSet {
        let mut out = FixedBitSet::with_capacity(self.cols);
        for r in from.ones() {
            for &c in self.row(r) {
                out.insert(c);
            }
        }
        out
    }
}
