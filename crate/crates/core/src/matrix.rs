//! Column-major dense matrix used for unfoldings, factors and sketches.

use crate::error::{Result, TensorError};
use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};
use std::fmt;

/// A dense column-major matrix of `f64`.
///
/// Zero-sized dimensions are permitted so that a range finder can report an
/// empty basis for a zero input.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            let rows: Vec<Vec<f64>> = (0..self.rows)
                .map(|i| (0..self.cols).map(|j| self.get(i, j)).collect())
                .collect();
            write!(f, "{rows:?}")
        } else {
            write!(f, "[..]")
        }
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = 1.0;
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::DimensionMismatch(format!(
                "{} values supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row-major literal data, convenient for small fixtures.
    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(TensorError::DimensionMismatch(format!(
                "{} values supplied for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self::from_fn(rows, cols, |i, j| values[i * cols + j]))
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Stacks column vectors side by side.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            if c.len() != rows {
                return Err(TensorError::DimensionMismatch(format!(
                    "column of length {} in a matrix with {rows} rows",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Ok(Self {
            rows,
            cols: columns.len(),
            data,
        })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + j * self.rows] = v;
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Copies out rows `start..end`.
    pub fn row_block(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_fn(end - start, self.cols, |i, j| self.get(start + i, j))
    }

    /// Copies out the given columns in order.
    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for &j in cols {
            data.extend_from_slice(self.col(j));
        }
        Matrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }

    /// Vertical concatenation.
    pub fn vstack(blocks: &[Matrix]) -> Result<Matrix> {
        let Some(first) = blocks.first() else {
            return Ok(Matrix::zeros(0, 0));
        };
        let cols = first.cols;
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(TensorError::DimensionMismatch(
                "vstack blocks disagree in column count".into(),
            ));
        }
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for b in blocks {
            for j in 0..cols {
                out.col_mut(j)[offset..offset + b.rows].copy_from_slice(b.col(j));
            }
            offset += b.rows;
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn as_faer(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.rows, self.cols)
    }

    pub fn as_faer_mut(&mut self) -> MatMut<'_, f64> {
        MatMut::from_column_major_slice_mut(&mut self.data, self.rows, self.cols)
    }

    pub(crate) fn from_faer(m: MatRef<'_, f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        check_inner(self.cols, rhs.rows, "matmul")?;
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(out.as_faer_mut(), Accum::Replace, self.as_faer(), rhs.as_faer(), 1.0);
        Ok(out)
    }

    /// `selfᵀ · rhs`
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        check_inner(self.rows, rhs.rows, "t_matmul")?;
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        gemm(
            out.as_faer_mut(),
            Accum::Replace,
            self.as_faer().transpose(),
            rhs.as_faer(),
            1.0,
        );
        Ok(out)
    }

    /// `self · rhsᵀ`
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        check_inner(self.cols, rhs.cols, "matmul_t")?;
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        gemm(
            out.as_faer_mut(),
            Accum::Replace,
            self.as_faer(),
            rhs.as_faer().transpose(),
            1.0,
        );
        Ok(out)
    }

    /// `selfᵀ · self`
    pub fn gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.cols);
        gemm(
            out.as_faer_mut(),
            Accum::Replace,
            self.as_faer().transpose(),
            self.as_faer(),
            1.0,
        );
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip(rhs, |a, b| a - b)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip(rhs, |a, b| a + b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip(rhs, |a, b| a * b)
    }

    fn zip(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, rhs: &Matrix) -> f64 {
        assert_eq!(self.shape(), rhs.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| self.col(j).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Flips the sign of every column whose largest-magnitude entry is negative.
    pub fn canonicalize_signs(&mut self) {
        for j in 0..self.cols {
            let col = self.col_mut(j);
            let mut best = 0.0f64;
            for &v in col.iter() {
                if v.abs() > best.abs() {
                    best = v;
                }
            }
            if best < 0.0 {
                col.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }
}

fn check_inner(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(TensorError::DimensionMismatch(format!(
            "{what}: inner dimensions {a} and {b}"
        )));
    }
    Ok(())
}

/// `dst ← alpha · lhs · rhs` (or `+=` with [`Accum::Add`]). Always sequential
/// so results do not depend on the host's thread count.
pub(crate) fn gemm(
    dst: MatMut<'_, f64>,
    accum: Accum,
    lhs: MatRef<'_, f64>,
    rhs: MatRef<'_, f64>,
    alpha: f64,
) {
    if lhs.ncols() == 0 {
        if matches!(accum, Accum::Replace) {
            let mut dst = dst;
            dst.fill(0.0);
        }
        return;
    }
    matmul(dst, accum, lhs, rhs, alpha, Par::Seq);
}
