//! Thin wrappers over `faer` factorizations, expressed in terms of [`Matrix`].

use crate::error::{Result, TensorError};
use crate::matrix::Matrix;
use faer::linalg::solvers::Solve;
use faer::Side;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted descending.
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

pub fn sym_eigen(s: &Matrix) -> Result<SymEigen> {
    if s.rows() != s.cols() {
        return Err(TensorError::DimensionMismatch(format!(
            "eigendecomposition of a non-square {}x{} matrix",
            s.rows(),
            s.cols()
        )));
    }
    let n = s.rows();
    if n == 0 {
        return Ok(SymEigen {
            values: vec![],
            vectors: Matrix::zeros(0, 0),
        });
    }
    let evd = s
        .as_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| TensorError::Numerical(format!("{e:?}")))?;
    let vals = evd.S().column_vector();
    let u = evd.U();
    // faer returns ascending order
    let values: Vec<f64> = (0..n).rev().map(|i| vals[i]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok(SymEigen { values, vectors })
}

/// Thin singular value decomposition, singular values descending.
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

pub fn thin_svd(m: &Matrix) -> Result<Svd> {
    let svd = m
        .as_faer()
        .thin_svd()
        .map_err(|e| TensorError::Numerical(format!("{e:?}")))?;
    let s = svd.S().column_vector();
    Ok(Svd {
        u: Matrix::from_faer(svd.U()),
        s: (0..s.nrows()).map(|i| s[i]).collect(),
        v: Matrix::from_faer(svd.V()),
    })
}

/// Orthonormal basis of `range(z)` from a column-pivoted QR, dropping columns
/// whose `|R_ii|` falls below `rel_tol · |R_00|`.
pub fn pivoted_qr_basis(z: &Matrix, rel_tol: f64) -> Matrix {
    let k = z.rows().min(z.cols());
    if k == 0 {
        return Matrix::zeros(z.rows(), 0);
    }
    let qr = z.as_faer().col_piv_qr();
    let r = qr.thin_R();
    let lead = r[(0, 0)].abs();
    let mut keep = 0;
    if lead > 0.0 && lead.is_finite() {
        while keep < k && r[(keep, keep)].abs() > rel_tol * lead {
            keep += 1;
        }
    }
    let q = qr.compute_thin_Q();
    Matrix::from_fn(z.rows(), keep, |i, j| q[(i, j)])
}

/// Solves `x · g = rhs` for a symmetric positive semidefinite `g`
/// (row-wise least squares, as in the ALS factor update). Falls back to a ridge
/// of `1e-12 · trace(g)` when the Cholesky factorization fails.
pub fn solve_right_spd(rhs: &Matrix, g: &Matrix) -> Result<Matrix> {
    let n = g.rows();
    if g.cols() != n || rhs.cols() != n {
        return Err(TensorError::DimensionMismatch(format!(
            "solve: rhs {}x{} against {}x{}",
            rhs.rows(),
            rhs.cols(),
            g.rows(),
            g.cols()
        )));
    }
    // x g = rhs  ⇔  g xᵀ = rhsᵀ (g symmetric)
    let mut xt = rhs.transpose();
    if let Ok(llt) = g.as_faer().llt(Side::Lower) {
        llt.solve_in_place(xt.as_faer_mut());
        if xt.data().iter().all(|v| v.is_finite()) {
            return Ok(xt.transpose());
        }
        xt = rhs.transpose();
    }
    let ridge = 1e-12 * g.trace().abs().max(f64::MIN_POSITIVE);
    let mut reg = g.clone();
    for i in 0..n {
        reg.set(i, i, reg.get(i, i) + ridge);
    }
    match reg.as_faer().llt(Side::Lower) {
        Ok(llt) => {
            llt.solve_in_place(xt.as_faer_mut());
            Ok(xt.transpose())
        }
        Err(_) => {
            // Indefinite by rounding: use the eigen pseudo-inverse with the
            // same floor.
            let eig = sym_eigen(&reg)?;
            let floor = ridge;
            let mut pinv = Matrix::zeros(n, n);
            for (k, &lam) in eig.values.iter().enumerate() {
                if lam > floor {
                    let v = eig.vectors.col(k);
                    for j in 0..n {
                        for i in 0..n {
                            let cur = pinv.get(i, j);
                            pinv.set(i, j, cur + v[i] * v[j] / lam);
                        }
                    }
                }
            }
            rhs.matmul(&pinv)
        }
    }
}

/// Largest principal angle between `range(a)` and `range(b)` (both with
/// orthonormal columns), returned as its sine: `‖b − a aᵀ b‖₂`.
pub fn subspace_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() {
        return Err(TensorError::DimensionMismatch(
            "subspace_distance: row counts differ".into(),
        ));
    }
    let proj = a.matmul(&a.t_matmul(b)?)?;
    let resid = b.sub(&proj)?;
    if resid.cols() == 0 {
        return Ok(0.0);
    }
    let s = thin_svd(&resid)?;
    let dist_ba = s.s.first().copied().unwrap_or(0.0);
    if a.cols() == b.cols() {
        return Ok(dist_ba);
    }
    // unequal dimensions: also measure the other direction
    let proj = b.matmul(&b.t_matmul(a)?)?;
    let resid = a.sub(&proj)?;
    let s = thin_svd(&resid)?;
    Ok(dist_ba.max(s.s.first().copied().unwrap_or(0.0)))
}
