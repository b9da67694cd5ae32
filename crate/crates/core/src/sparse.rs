//! Compressed sparse column storage where each column is one sample.
//!
//! Both partitioning modes keep samples as columns: a sample-partitioned shard
//! holds all `d` rows for a range of columns, a feature-partitioned shard holds
//! a range of rows for every column.

use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn empty(nrows: usize) -> Self {
        CscMatrix {
            nrows,
            col_ptr: vec![0],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a matrix from raw parts. Row indices inside each column must be
    /// strictly ascending and below `nrows`.
    pub fn from_parts(
        nrows: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        assert!(!col_ptr.is_empty(), "col_ptr needs a leading zero");
        assert_eq!(col_ptr[0], 0);
        assert_eq!(*col_ptr.last().unwrap(), row_idx.len());
        assert_eq!(row_idx.len(), values.len());
        debug_assert!(col_ptr.windows(2).all(|w| w[0] <= w[1]));
        debug_assert!(col_ptr.windows(2).all(|w| {
            let rows = &row_idx[w[0]..w[1]];
            rows.windows(2).all(|p| p[0] < p[1]) && rows.iter().all(|&r| r < nrows)
        }));
        CscMatrix {
            nrows,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Checked variant of [`from_parts`](CscMatrix::from_parts) for untrusted input.
    pub fn try_from_parts(
        nrows: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |reason: &str| Err(Error::config("matrix", reason));
        if col_ptr.first() != Some(&0) {
            return bad("col_ptr must start at 0");
        }
        if *col_ptr.last().unwrap() != row_idx.len() || row_idx.len() != values.len() {
            return bad("col_ptr, row_idx and values lengths disagree");
        }
        for w in col_ptr.windows(2) {
            if w[0] > w[1] {
                return bad("col_ptr must be nondecreasing");
            }
            let rows = &row_idx[w[0]..w[1]];
            if rows.windows(2).any(|p| p[0] >= p[1]) || rows.iter().any(|&r| r >= nrows) {
                return bad("row indices must ascend within a column and stay below nrows");
            }
        }
        Ok(CscMatrix::from_parts(nrows, col_ptr, row_idx, values))
    }

    /// Builds a matrix from a dense column-major buffer, dropping exact zeros.
    pub fn from_dense_columns(nrows: usize, columns: &[Vec<f64>]) -> Self {
        let mut m = CscMatrix::empty(nrows);
        for col in columns {
            assert_eq!(col.len(), nrows);
            m.push_column(
                col.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i, *v)),
            );
        }
        m
    }

    pub fn push_column(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (r, v) in entries {
            debug_assert!(r < self.nrows);
            self.row_idx.push(r);
            self.values.push(v);
        }
        self.col_ptr.push(self.row_idx.len());
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let span = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[span.clone()], &self.values[span])
    }

    #[inline]
    pub fn col_dot(&self, j: usize, x: &[f64]) -> f64 {
        let (rows, vals) = self.col(j);
        rows.iter().zip(vals).map(|(&r, &v)| v * x[r]).sum()
    }

    #[inline]
    pub fn col_axpy(&self, j: usize, alpha: f64, y: &mut [f64]) {
        let (rows, vals) = self.col(j);
        for (&r, &v) in rows.iter().zip(vals) {
            y[r] += alpha * v;
        }
    }

    /// Dot product of two columns, merging their sorted row lists.
    pub fn col_col_dot(&self, a: usize, other: &CscMatrix, b: usize) -> f64 {
        let (ra, va) = self.col(a);
        let (rb, vb) = other.col(b);
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < ra.len() && j < rb.len() {
            match ra[i].cmp(&rb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += va[i] * vb[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// `Xᵀx`: one inner product per column.
    pub fn transpose_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        (0..self.ncols()).map(|j| self.col_dot(j, x)).collect()
    }

    /// `X·c`: linear combination of columns.
    pub fn mul(&self, coef: &[f64]) -> Vec<f64> {
        assert_eq!(coef.len(), self.ncols());
        let mut out = vec![0.0; self.nrows];
        for (j, &c) in coef.iter().enumerate() {
            if c != 0.0 {
                self.col_axpy(j, c, &mut out);
            }
        }
        out
    }

    /// Columns in `range`, all rows kept.
    pub fn select_cols(&self, range: Range<usize>) -> CscMatrix {
        let lo = self.col_ptr[range.start];
        let hi = self.col_ptr[range.end];
        CscMatrix {
            nrows: self.nrows,
            col_ptr: self.col_ptr[range.start..=range.end]
                .iter()
                .map(|p| p - lo)
                .collect(),
            row_idx: self.row_idx[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
        }
    }

    /// Rows in `range`, remapped to start at zero; all columns kept.
    pub fn select_rows(&self, range: Range<usize>) -> CscMatrix {
        let mut out = CscMatrix::empty(range.len());
        for j in 0..self.ncols() {
            let (rows, vals) = self.col(j);
            let start = rows.partition_point(|&r| r < range.start);
            let end = rows.partition_point(|&r| r < range.end);
            out.push_column(
                rows[start..end]
                    .iter()
                    .zip(&vals[start..end])
                    .map(|(&r, &v)| (r - range.start, v)),
            );
        }
        out
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hstack(parts: &[CscMatrix]) -> CscMatrix {
        let nrows = parts.first().map_or(0, |p| p.nrows);
        let mut out = CscMatrix::empty(nrows);
        for p in parts {
            assert_eq!(p.nrows, nrows);
            for j in 0..p.ncols() {
                let (rows, vals) = p.col(j);
                out.push_column(rows.iter().copied().zip(vals.iter().copied()));
            }
        }
        out
    }

    /// Concatenates matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[CscMatrix]) -> CscMatrix {
        let ncols = parts.first().map_or(0, |p| p.ncols());
        let nrows = parts.iter().map(|p| p.nrows).sum();
        let mut out = CscMatrix::empty(nrows);
        for j in 0..ncols {
            let mut offset = 0;
            let mut col = Vec::new();
            for p in parts {
                assert_eq!(p.ncols(), ncols);
                let (rows, vals) = p.col(j);
                col.extend(rows.iter().zip(vals).map(|(&r, &v)| (r + offset, v)));
                offset += p.nrows;
            }
            out.push_column(col);
        }
        out
    }

    /// Dense row-major copy; intended for tests and small instances.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols()]; self.nrows];
        #[allow(clippy::needless_range_loop)]
        for j in 0..self.ncols() {
            let (rows, vals) = self.col(j);
            for (&r, &v) in rows.iter().zip(vals) {
                dense[r][j] = v;
            }
        }
        dense
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CscMatrix {
        // [[1, 0, 2],
        //  [0, 3, 0],
        //  [4, 0, 5]]
        CscMatrix::from_parts(
            3,
            vec![0, 2, 3, 5],
            vec![0, 2, 1, 0, 2],
            vec![1.0, 4.0, 3.0, 2.0, 5.0],
        )
    }

    #[test]
    fn products() {
        let m = sample();
        assert_eq!(m.transpose_mul(&[1.0, 1.0, 1.0]), vec![5.0, 3.0, 7.0]);
        assert_eq!(m.mul(&[1.0, 0.0, 1.0]), vec![3.0, 0.0, 9.0]);
        assert_eq!(m.col_col_dot(0, &m, 2), 22.0);
    }

    #[test]
    fn slicing_round_trips() {
        let m = sample();
        let top = m.select_rows(0..1);
        let bottom = m.select_rows(1..3);
        assert_eq!(CscMatrix::vstack(&[top, bottom]), m);
        let left = m.select_cols(0..2);
        let right = m.select_cols(2..3);
        assert_eq!(CscMatrix::hstack(&[left, right]), m);
    }
}
