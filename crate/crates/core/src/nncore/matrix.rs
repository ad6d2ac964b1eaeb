use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major values, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite value at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
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
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }

    /// Returns a copy with `column` appended on the right.
    pub fn with_appended_column(&self, column: &[f64]) -> Result<Matrix> {
        if column.len() != self.rows {
            return Err(Error::Shape(format!(
                "appended column has {} entries, matrix has {} rows",
                column.len(),
                self.rows
            )));
        }
        let cols = self.cols + 1;
        let mut values = Vec::with_capacity(self.rows * cols);
        for (r, &extra) in column.iter().enumerate() {
            values.extend_from_slice(self.row(r));
            values.push(extra);
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            values,
        })
    }

    /// `self · rhs + bias` broadcast over rows.
    pub(crate) fn affine(&self, rhs: &Matrix, bias: &[f64]) -> Matrix {
        debug_assert_eq!(self.cols, rhs.rows);
        debug_assert_eq!(bias.len(), rhs.cols);
        let n = rhs.cols;
        let mut out = Matrix::zeros(self.rows, n);
        for i in 0..self.rows {
            let dst = &mut out.values[i * n..(i + 1) * n];
            dst.copy_from_slice(bias);
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let w = &rhs.values[k * n..(k + 1) * n];
                for (d, &wv) in dst.iter_mut().zip(w) {
                    *d += a * wv;
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs`, accumulated into `out` (shape `self.cols × rhs.cols`).
    pub(crate) fn add_transpose_mul(&self, rhs: &Matrix, out: &mut Matrix) {
        debug_assert_eq!(self.rows, rhs.rows);
        let n = rhs.cols;
        for i in 0..self.rows {
            let r = rhs.row(i);
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.values[k * n..(k + 1) * n];
                for (d, &rv) in dst.iter_mut().zip(r) {
                    *d += a * rv;
                }
            }
        }
    }

    /// `self · rhsᵀ`.
    pub(crate) fn mul_transpose(&self, rhs: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, rhs.cols);
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for k in 0..rhs.rows {
                let b = rhs.row(k);
                out.values[i * rhs.rows + k] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        out
    }
}
