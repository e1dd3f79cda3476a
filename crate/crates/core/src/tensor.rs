//! Dense N-way tensors and the multilinear kernels shared by every engine.
//!
//! Storage is column-major: the first index varies fastest. The mode-`n`
//! unfolding places element `(i_1, …, i_N)` in row `i_n` and orders the
//! remaining modes ascending, first remaining mode fastest. The Khatri-Rao
//! product that pairs with this unfolding takes the factors in descending mode
//! order, which is what [`khatri_rao_skip`] builds.
//!
//! Modes are zero-based throughout the API.

use crate::error::{Result, TensorError};
use crate::matrix::{gemm, Matrix};
use faer::{Accum, MatMut, MatRef};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::InvalidShape {
                shape,
                reason: format!("{} values supplied, {numel} expected", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        })
    }

    /// Fills a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        validate_shape(shape)?;
        let numel: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Views a matrix as an order-2 tensor.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Self::new(vec![m.rows(), m.cols()], m.data().to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        linear_index(&self.shape, idx)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let k = self.linear_index(idx);
        self.data[k] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        check_same_shape(self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        check_same_shape(self, other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        check_same_shape(self, other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "a tensor needs at least one mode".into(),
        });
    }
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be positive".into(),
        });
    }
    Ok(())
}

fn check_same_shape(a: &DenseTensor, b: &DenseTensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(TensorError::DimensionMismatch(format!(
            "shapes {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

fn check_mode(shape: &[usize], mode: usize) -> Result<()> {
    if mode >= shape.len() {
        return Err(TensorError::ModeOutOfRange {
            mode,
            order: shape.len(),
        });
    }
    Ok(())
}

/// Column-major linear offset of a multi-index.
pub fn linear_index(shape: &[usize], idx: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), idx.len());
    let mut k = 0;
    let mut stride = 1;
    for (&i, &d) in idx.iter().zip(shape) {
        debug_assert!(i < d);
        k += i * stride;
        stride *= d;
    }
    k
}

/// Inverse of [`linear_index`].
pub fn multi_index(shape: &[usize], mut k: usize) -> Vec<usize> {
    shape
        .iter()
        .map(|&d| {
            let i = k % d;
            k /= d;
            i
        })
        .collect()
}

/// Advances a column-major multi-index by one position (wrapping at the end).
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

/// `(∏_{k<n} I_k, I_n, ∏_{k>n} I_k)`: a column-major tensor is a
/// `left × dim × right` array with respect to mode `n`.
pub(crate) fn mode_layout(shape: &[usize], n: usize) -> (usize, usize, usize) {
    let left = shape[..n].iter().product();
    let right = shape[n + 1..].iter().product();
    (left, shape[n], right)
}

/// Mode-`n` matricization.
pub fn unfold(t: &DenseTensor, n: usize) -> Result<Matrix> {
    check_mode(&t.shape, n)?;
    let (left, dim, right) = mode_layout(&t.shape, n);
    let cols = left * right;
    let mut out = vec![0.0; dim * cols];
    for r in 0..right {
        for i in 0..dim {
            let src = &t.data[left * (i + dim * r)..left * (i + dim * r + 1)];
            for (l, &v) in src.iter().enumerate() {
                out[i + dim * (l + left * r)] = v;
            }
        }
    }
    Matrix::from_col_major(dim, cols, out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, n: usize, shape: &[usize]) -> Result<DenseTensor> {
    validate_shape(shape)?;
    check_mode(shape, n)?;
    let (left, dim, right) = mode_layout(shape, n);
    if m.rows() != dim || m.cols() != left * right {
        return Err(TensorError::DimensionMismatch(format!(
            "cannot fold a {}x{} matrix along mode {n} into {shape:?}",
            m.rows(),
            m.cols()
        )));
    }
    let src = m.data();
    let mut data = vec![0.0; dim * left * right];
    for r in 0..right {
        for i in 0..dim {
            let dst = &mut data[left * (i + dim * r)..left * (i + dim * r + 1)];
            for (l, v) in dst.iter_mut().enumerate() {
                *v = src[i + dim * (l + left * r)];
            }
        }
    }
    Ok(DenseTensor::from_parts_unchecked(shape.to_vec(), data))
}

/// Mode-`n` product `T ×_n M`; the result replaces `I_n` by `M.rows()`.
pub fn ttm(t: &DenseTensor, m: &Matrix, n: usize) -> Result<DenseTensor> {
    check_mode(&t.shape, n)?;
    let (left, dim, right) = mode_layout(&t.shape, n);
    if m.cols() != dim {
        return Err(TensorError::DimensionMismatch(format!(
            "ttm: matrix has {} columns, mode {n} has size {dim}",
            m.cols()
        )));
    }
    let out_dim = m.rows();
    let mut shape = t.shape.clone();
    shape[n] = out_dim;
    let mut data = vec![0.0; left * out_dim * right];
    if out_dim == 0 {
        return Err(TensorError::DimensionMismatch(
            "ttm with a zero-row matrix produces an empty tensor".into(),
        ));
    }
    if left == 1 {
        let src = MatRef::from_column_major_slice(&t.data, dim, right);
        let dst = MatMut::from_column_major_slice_mut(&mut data, out_dim, right);
        gemm(dst, Accum::Replace, m.as_faer(), src, 1.0);
    } else {
        let mt = m.as_faer().transpose();
        for (src, dst) in t
            .data
            .chunks_exact(left * dim)
            .zip(data.chunks_exact_mut(left * out_dim))
        {
            let src = MatRef::from_column_major_slice(src, left, dim);
            let dst = MatMut::from_column_major_slice_mut(dst, left, out_dim);
            gemm(dst, Accum::Replace, src, mt, 1.0);
        }
    }
    Ok(DenseTensor::from_parts_unchecked(shape, data))
}

/// Applies `T ×_p M_p` for every `(p, M_p)` pair, in the given order.
pub fn ttm_chain<'a>(
    t: &DenseTensor,
    products: impl IntoIterator<Item = (usize, &'a Matrix)>,
) -> Result<DenseTensor> {
    let mut cur: Option<DenseTensor> = None;
    for (p, m) in products {
        let next = ttm(cur.as_ref().unwrap_or(t), m, p)?;
        cur = Some(next);
    }
    Ok(cur.unwrap_or_else(|| t.clone()))
}

/// Gram matrix of the mode-`n` unfolding, `Y_(n) Y_(n)ᵀ`, without materializing
/// the unfolding.
pub fn mode_gram(t: &DenseTensor, n: usize) -> Result<Matrix> {
    check_mode(&t.shape, n)?;
    let (left, dim, right) = mode_layout(&t.shape, n);
    let mut out = Matrix::zeros(dim, dim);
    if left == 1 {
        let y = MatRef::from_column_major_slice(&t.data, dim, right);
        gemm(out.as_faer_mut(), Accum::Replace, y, y.transpose(), 1.0);
    } else {
        for slab in t.data.chunks_exact(left * dim) {
            let s = MatRef::from_column_major_slice(slab, left, dim);
            gemm(out.as_faer_mut(), Accum::Add, s.transpose(), s, 1.0);
        }
    }
    Ok(out)
}

/// Standard Kronecker product.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (br, bc) = b.shape();
    Matrix::from_fn(a.rows() * br, a.cols() * bc, |i, j| {
        a.get(i / br, j / bc) * b.get(i % br, j % bc)
    })
}

/// Column-wise Kronecker product of the matrices in list order: the last
/// matrix's row index varies fastest. An empty list yields a `1 × 0` matrix;
/// use [`khatri_rao_with_cols`] when the column count must be fixed.
pub fn khatri_rao(ms: &[&Matrix]) -> Result<Matrix> {
    let cols = ms.first().map_or(0, |m| m.cols());
    khatri_rao_with_cols(ms, cols)
}

/// [`khatri_rao`] with an explicit column count, so an empty list produces a
/// `1 × cols` matrix of ones.
pub fn khatri_rao_with_cols(ms: &[&Matrix], cols: usize) -> Result<Matrix> {
    if let Some(bad) = ms.iter().find(|m| m.cols() != cols) {
        return Err(TensorError::DimensionMismatch(format!(
            "khatri_rao: expected {cols} columns, found {}",
            bad.cols()
        )));
    }
    let mut acc = Matrix::from_fn(1, cols, |_, _| 1.0);
    for m in ms {
        let rows = acc.rows() * m.rows();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..cols {
            for &x in acc.col(r) {
                for &y in m.col(r) {
                    data.push(x * y);
                }
            }
        }
        acc = Matrix::from_col_major(rows, cols, data)?;
    }
    Ok(acc)
}

/// `B^(n)`: the Khatri-Rao product of every factor except `skip`, in
/// descending mode order, so that `unfold([[A]], n) = A^(n) B^(n)ᵀ`.
pub fn khatri_rao_skip(factors: &[Matrix], skip: usize) -> Result<Matrix> {
    let cols = common_cols(factors)?;
    let ms: Vec<&Matrix> = factors
        .iter()
        .enumerate()
        .rev()
        .filter(|(p, _)| *p != skip)
        .map(|(_, m)| m)
        .collect();
    khatri_rao_with_cols(&ms, cols)
}

fn common_cols(factors: &[Matrix]) -> Result<usize> {
    let cols = factors.first().map_or(0, |m| m.cols());
    if factors.iter().any(|m| m.cols() != cols) {
        return Err(TensorError::DimensionMismatch(
            "factor matrices disagree in column count".into(),
        ));
    }
    Ok(cols)
}

/// `⊛_{p≠skip} A^(p)ᵀ A^(p)`, which equals `B^(n)ᵀ B^(n)`.
pub fn gram_hadamard(factors: &[Matrix], skip: usize) -> Result<Matrix> {
    common_cols(factors)?;
    let grams: Vec<Matrix> = factors.iter().map(Matrix::gram).collect();
    Ok(hadamard_of_grams(&grams, skip))
}

/// Hadamard product of precomputed Gram matrices, skipping one mode.
pub fn hadamard_of_grams(grams: &[Matrix], skip: usize) -> Matrix {
    let r = grams.first().map_or(0, |g| g.rows());
    let mut out = Matrix::from_fn(r, r, |_, _| 1.0);
    for (p, g) in grams.iter().enumerate() {
        if p != skip {
            out.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(o, &x)| *o *= x);
        }
    }
    out
}

/// Matricized tensor times Khatri-Rao product, `Y_(n) B^(n)`, computed
/// without forming the unfolding or the full Khatri-Rao matrix.
pub fn mttkrp(t: &DenseTensor, factors: &[Matrix], n: usize) -> Result<Matrix> {
    check_mode(&t.shape, n)?;
    if factors.len() != t.order() {
        return Err(TensorError::DimensionMismatch(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            t.order()
        )));
    }
    let rank = common_cols(factors)?;
    for (p, f) in factors.iter().enumerate() {
        if p != n && f.rows() != t.shape[p] {
            return Err(TensorError::DimensionMismatch(format!(
                "factor {p} has {} rows, mode size is {}",
                f.rows(),
                t.shape[p]
            )));
        }
    }
    let (left, dim, right) = mode_layout(&t.shape, n);
    let left_ms: Vec<&Matrix> = factors[..n].iter().rev().collect();
    let right_ms: Vec<&Matrix> = factors[n + 1..].iter().rev().collect();
    let mut out = Matrix::zeros(dim, rank);

    if left == 1 {
        let kr_right = khatri_rao_with_cols(&right_ms, rank)?;
        let y = MatRef::from_column_major_slice(&t.data, dim, right);
        gemm(out.as_faer_mut(), Accum::Replace, y, kr_right.as_faer(), 1.0);
    } else if right == 1 {
        let kr_left = khatri_rao_with_cols(&left_ms, rank)?;
        let y = MatRef::from_column_major_slice(&t.data, left, dim);
        gemm(
            out.as_faer_mut(),
            Accum::Replace,
            y.transpose(),
            kr_left.as_faer(),
            1.0,
        );
    } else {
        // Contract the trailing modes with one large product, then the
        // leading modes column by column.
        let kr_left = khatri_rao_with_cols(&left_ms, rank)?;
        let kr_right = khatri_rao_with_cols(&right_ms, rank)?;
        let y = MatRef::from_column_major_slice(&t.data, left * dim, right);
        let mut w = Matrix::zeros(left * dim, rank);
        gemm(w.as_faer_mut(), Accum::Replace, y, kr_right.as_faer(), 1.0);
        for r in 0..rank {
            let wr = MatRef::from_column_major_slice(w.col(r), left, dim);
            let kl = MatRef::from_column_major_slice(kr_left.col(r), left, 1);
            let dst = MatMut::from_column_major_slice_mut(out.col_mut(r), dim, 1);
            gemm(dst, Accum::Replace, wr.transpose(), kl, 1.0);
        }
    }
    Ok(out)
}

pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.squared_norm().sqrt()
}

/// `1 − ‖Y − Ŷ‖_F / ‖Y‖_F`.
pub fn fit(y: &DenseTensor, y_hat: &DenseTensor) -> Result<f64> {
    check_same_shape(y, y_hat)?;
    let norm = y.frobenius_norm();
    if norm == 0.0 {
        return Err(TensorError::ZeroNorm);
    }
    let resid: f64 = y
        .data
        .iter()
        .zip(&y_hat.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - resid.sqrt() / norm)
}
