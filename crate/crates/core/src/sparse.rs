//! Compressed sparse row storage.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Real matrix in compressed-sparse-row form.
///
/// Column indices inside a row are strictly increasing and no exact zeros are
/// stored once a matrix has been built from triplets.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate-format accumulator used while stamping.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Triplets {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    /// Adds `value` at `(row, col)`; duplicates are summed on build.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        self.entries.push((row, col, value));
    }

    /// Adds `value` when both indices are present; `None` is the ground node.
    pub fn add_opt(&mut self, row: Option<usize>, col: Option<usize>, value: f64) {
        if let (Some(r), Some(c)) = (row, col) {
            self.add(r, c, value);
        }
    }

    /// Stamps a two-terminal admittance-like value between `a` and `b`.
    pub fn stamp_pair(&mut self, a: Option<usize>, b: Option<usize>, value: f64) {
        self.add_opt(a, a, value);
        self.add_opt(b, b, value);
        self.add_opt(a, b, -value);
        self.add_opt(b, a, -value);
    }

    pub fn extend_from(&mut self, m: &CsrMatrix) {
        for (r, c, v) in m.iter() {
            self.add(r, c, v);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut row_offsets = vec![0usize; self.n_rows + 1];
        let mut col_indices = Vec::with_capacity(self.entries.len());
        let mut values = Vec::with_capacity(self.entries.len());
        let mut i = 0;
        while i < self.entries.len() {
            let (r, c, _) = self.entries[i];
            let mut sum = 0.0;
            while i < self.entries.len() && self.entries[i].0 == r && self.entries[i].1 == c {
                sum += self.entries[i].2;
                i += 1;
            }
            if sum != 0.0 {
                col_indices.push(c);
                values.push(sum);
                row_offsets[r + 1] += 1;
            }
        }
        for r in 0..self.n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }
}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 {
            return Err(Error::DimensionMismatch {
                expected: n_rows + 1,
                found: row_offsets.len(),
            });
        }
        if col_indices.len() != values.len() || row_offsets[n_rows] != values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: col_indices.len(),
            });
        }
        if row_offsets[0] != 0 {
            return Err(Error::InvalidArgument("row offsets must start at zero"));
        }
        for r in 0..n_rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if hi < lo {
                return Err(Error::InvalidArgument("row offsets must be nondecreasing"));
            }
            let cols = &col_indices[lo..hi];
            if cols.iter().any(|&c| c >= n_cols) {
                return Err(Error::InvalidArgument("column index out of range"));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(
                    "column indices must be strictly increasing within a row",
                ));
            }
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn from_triplets(n_rows: usize, n_cols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut t = Triplets::new(n_rows, n_cols);
        for &(r, c, v) in entries {
            t.add(r, c, v);
        }
        t.build()
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let entries: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), &entries)
    }

    /// Dense row-major input, exact zeros dropped.
    pub fn from_dense(rows: &[&[f64]]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut t = Triplets::new(n_rows, n_cols);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                t.add(i, j, v);
            }
        }
        t.build()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_offsets[self.n_rows]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Iterates stored entries as `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `A x`, accumulated in stored order.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                found: x.len(),
            });
        }
        if y.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                found: y.len(),
            });
        }
        for (r, yr) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *yr = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
        Ok(())
    }

    /// `alpha * self + beta * other` on the union pattern.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Result<CsrMatrix> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                found: other.n_rows,
            });
        }
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        row_offsets.push(0);
        for r in 0..self.n_rows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                let (c, v) = if j >= cb.len() || (i < ca.len() && ca[i] < cb[j]) {
                    i += 1;
                    (ca[i - 1], alpha * va[i - 1])
                } else if i >= ca.len() || cb[j] < ca[i] {
                    j += 1;
                    (cb[j - 1], beta * vb[j - 1])
                } else {
                    i += 1;
                    j += 1;
                    (ca[i - 1], alpha * va[i - 1] + beta * vb[j - 1])
                };
                if v != 0.0 {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = Triplets::new(self.n_cols, self.n_rows);
        for (r, c, v) in self.iter() {
            t.add(c, r, v);
        }
        t.build()
    }

    pub fn scale(&self, alpha: f64) -> CsrMatrix {
        if alpha == 0.0 {
            return CsrMatrix::zeros(self.n_rows, self.n_cols);
        }
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= alpha);
        m
    }

    /// Largest stored magnitude.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Indices of rows with no stored entries.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.n_rows)
            .filter(|&r| self.row_offsets[r] == self.row_offsets[r + 1])
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, c, v) in self.iter() {
            d[r][c] = v;
        }
        d
    }
}
