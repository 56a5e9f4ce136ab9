//! Row-major dense matrices over `f64`.
//!
//! The engine deliberately sticks to one matrix type: desk-scale graphs make
//! sparse formats unnecessary, and a single row-major layout with fixed
//! index-order summation keeps every run bit-reproducible.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};

/// Row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> CoreResult<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::shape(format!(
                "data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> CoreResult<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(CoreError::shape("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Ok(DenseMatrix { rows: r, cols: c, data })
    }

    /// Column vector from a slice.
    pub fn column(values: &[f64]) -> Self {
        DenseMatrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// Single-row matrix from a slice.
    pub fn row_vector(values: &[f64]) -> Self {
        DenseMatrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other`, ikj loop order, fixed summation order.
    pub fn matmul(&self, other: &Self) -> CoreResult<Self> {
        if self.cols != other.rows {
            return Err(CoreError::shape(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let lhs = k * other.cols;
                let dst = i * other.cols;
                for j in 0..other.cols {
                    out.data[dst + j] += a * other.data[lhs + j];
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> CoreResult<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> CoreResult<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> CoreResult<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> CoreResult<Self> {
        if !self.same_shape(other) {
            return Err(CoreError::shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Adds `row` to every row of `self` (bias broadcast).
    pub fn add_row_broadcast(&self, row: &[f64]) -> CoreResult<Self> {
        if row.len() != self.cols {
            return Err(CoreError::shape("broadcast width mismatch"));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let dst = out.row_mut(r);
            for (d, b) in dst.iter_mut().zip(row) {
                *d += *b;
            }
        }
        Ok(out)
    }

    /// Column sums as a length-`cols` vector, summed in row order.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(r)) {
                *s += *v;
            }
        }
        sums
    }

    /// Selects the given rows into a new matrix, in the order given.
    pub fn select_rows(&self, idx: &[usize]) -> CoreResult<Self> {
        let mut out = Self::zeros(idx.len(), self.cols);
        for (i, &r) in idx.iter().enumerate() {
            if r >= self.rows {
                return Err(CoreError::invalid(format!("row {} out of range", r)));
            }
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        Ok(out)
    }

    /// Copies rows `lo..hi` into a new matrix.
    pub fn select_rows_range(&self, lo: usize, hi: usize) -> Self {
        let hi = hi.min(self.rows);
        let lo = lo.min(hi);
        let mut out = Self::zeros(hi - lo, self.cols);
        for (dst, src) in (lo..hi).enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    /// Appends `row` as a new final row.
    pub fn push_row(&mut self, row: &[f64]) -> CoreResult<()> {
        if self.rows > 0 && row.len() != self.cols {
            return Err(CoreError::shape("push_row width mismatch"));
        }
        if self.rows == 0 {
            self.cols = row.len();
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Max absolute entry (0 for empty matrices).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| {
            let a = crate::fp::abs(*v);
            if a > m {
                a
            } else {
                m
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_computation() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch_rejected() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn transpose_roundtrip() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn select_rows_preserves_order() {
        let a = DenseMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let s = a.select_rows(&[2, 0]).unwrap();
        assert_eq!(s.data(), &[2.0, 0.0]);
    }
}
