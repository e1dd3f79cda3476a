//! Seeded Gaussian test matrices and the randomized range finder.
//!
//! Gaussian entries are addressed by position: entry `(row, col)` of the
//! matrix drawn for a [`SeedSpec`] is a pure function of `(root, stream, row,
//! col)`. Any sub-block can therefore be regenerated independently, which is
//! what lets distributed workers build identical slices of a shared sketch
//! matrix without exchanging it.

use crate::error::{Result, TensorError};
use crate::linalg::{pivoted_qr_basis, sym_eigen, thin_svd};
use crate::matrix::{gemm, Matrix};
use crate::tensor::{mode_layout, DenseTensor};
use faer::{Accum, MatRef};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative floor below which a direction is treated as numerically absent.
pub const RANK_TOL: f64 = 1e-12;

/// Default oversampling for the range finder.
pub const DEFAULT_OVERSAMPLING: usize = 10;

/// A root seed plus a stream id; identical pairs yield identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub root: u64,
    pub stream: u64,
}

impl SeedSpec {
    pub fn new(root: u64) -> Self {
        Self { root, stream: 0 }
    }

    pub fn with_stream(root: u64, stream: u64) -> Self {
        Self { root, stream }
    }

    /// Derives an independent child stream labelled by `tag`.
    pub fn derive(self, tag: u64) -> Self {
        Self {
            root: self.root,
            stream: mix64(self.stream ^ mix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    /// Sequential RNG for draws that need no random access.
    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(self.stream);
        rng
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const ROW_BITS: u32 = 40;
const WORDS_PER_ENTRY: u128 = 4;

/// Random-access view of the standard normal field of one [`SeedSpec`].
pub struct GaussianField {
    rng: ChaCha8Rng,
    next: Option<(u64, u64)>,
}

impl GaussianField {
    pub fn new(seed: SeedSpec) -> Self {
        Self {
            rng: seed.rng(),
            next: None,
        }
    }

    /// Standard normal entry at `(row, col)`.
    pub fn at(&mut self, row: u64, col: u64) -> f64 {
        debug_assert!(row < (1 << ROW_BITS) && col < (1 << (64 - ROW_BITS)));
        if self.next != Some((row, col)) {
            let pos = ((col as u128) << ROW_BITS) | row as u128;
            self.rng.set_word_pos(pos * WORDS_PER_ENTRY);
        }
        self.next = Some((row + 1, col));
        // Box-Muller; one output per two 64-bit words keeps positions fixed.
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fills `out[i]` with entry `(rows[i], col)`.
    pub fn fill(&mut self, rows: &[u64], col: u64, out: &mut [f64]) {
        for (o, &r) in out.iter_mut().zip(rows) {
            *o = self.at(r, col);
        }
    }
}

/// `rows × cols` matrix of i.i.d. standard normal entries.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: SeedSpec) -> Matrix {
    let mut field = GaussianField::new(seed);
    let mut m = Matrix::zeros(rows, cols);
    for j in 0..cols {
        for (i, v) in m.col_mut(j).iter_mut().enumerate() {
            *v = field.at(i as u64, j as u64);
        }
    }
    m
}

/// Rows `rows` (global indices) of the matrix [`gaussian_matrix`] would draw.
pub fn gaussian_rows(rows: &[u64], cols: usize, seed: SeedSpec) -> Matrix {
    let mut field = GaussianField::new(seed);
    let mut m = Matrix::zeros(rows.len(), cols);
    for j in 0..cols {
        field.fill(rows, j as u64, m.col_mut(j));
    }
    m
}

/// Orthonormal basis of `range(z)` by rank-revealing (column-pivoted) QR.
/// Numerically dependent columns are dropped, so the column count is the
/// effective rank.
pub fn orthonormal_basis(z: &Matrix) -> Matrix {
    pivoted_qr_basis(z, RANK_TOL)
}

/// Sign of the largest-magnitude entry of `v` (ties resolved by the first).
fn dominant_sign(v: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Left singular vectors of `z` whose singular values exceed
/// `RANK_TOL · σ_max`, each signed so that the matching right singular vector
/// has a positive dominant entry.
///
/// Unlike [`orthonormal_basis`], the result depends on `z` itself rather than
/// only on its range, and it coincides with the row-block path of
/// [`gram_orthonormalize`]. The randomized Tucker compressors use it so that a
/// block-distributed run reproduces the same factors.
pub fn canonical_basis(z: &Matrix) -> Result<Matrix> {
    if z.cols() == 0 || z.rows() == 0 {
        return Ok(Matrix::zeros(z.rows(), 0));
    }
    let svd = thin_svd(z)?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    if !(smax > 0.0) {
        return Ok(Matrix::zeros(z.rows(), 0));
    }
    let keep = svd.s.iter().take_while(|&&s| s > RANK_TOL * smax).count();
    let mut u = Matrix::zeros(z.rows(), keep);
    for j in 0..keep {
        let sign = dominant_sign(svd.v.col(j));
        for (o, &x) in u.col_mut(j).iter_mut().zip(svd.u.col(j)) {
            *o = sign * x;
        }
    }
    Ok(u)
}

/// Randomized range finder: `orthonormal_basis(M Ω)` with `Ω` a
/// `M.cols() × r_tilde` Gaussian matrix.
pub fn range_finder(m: &Matrix, r_tilde: usize, seed: SeedSpec) -> Result<Matrix> {
    if r_tilde == 0 {
        return Err(TensorError::InvalidArgument(
            "range finder needs at least one sample column".into(),
        ));
    }
    let omega = gaussian_matrix(m.cols(), r_tilde, seed);
    Ok(orthonormal_basis(&m.matmul(&omega)?))
}

/// Right factor `W = U_k Σ_k^{-1/2}` that orthonormalizes a row-partitioned
/// matrix from its Gram matrix `Σ_s Z_sᵀ Z_s = U Σ Uᵀ`. Eigenvalues below
/// `RANK_TOL · λ_max` are discarded together with their directions; each
/// eigenvector is signed so that its dominant entry is positive.
/// Returns `W` and the full descending spectrum.
pub fn gram_rotation(gram: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let eig = sym_eigen(gram)?;
    let lmax = eig.values.first().copied().unwrap_or(0.0);
    if !(lmax > 0.0) {
        return Err(TensorError::ZeroRank("Gram matrix has no positive eigenvalue".into()));
    }
    let keep = eig
        .values
        .iter()
        .take_while(|&&l| l > RANK_TOL * lmax)
        .count();
    let n = gram.rows();
    let signs: Vec<f64> = (0..keep).map(|j| dominant_sign(eig.vectors.col(j))).collect();
    let w = Matrix::from_fn(n, keep, |i, j| {
        signs[j] * eig.vectors.get(i, j) / eig.values[j].sqrt()
    });
    Ok((w, eig.values))
}

/// Orthonormalizes a vertically stacked matrix given as row blocks, using only
/// the small Gram matrix `Σ Z_sᵀ Z_s`; each output block is `Z_s W`.
pub fn gram_orthonormalize(blocks: &[Matrix]) -> Result<(Vec<Matrix>, Vec<f64>)> {
    let Some(first) = blocks.first() else {
        return Err(TensorError::InvalidArgument("no blocks supplied".into()));
    };
    let r = first.cols();
    if blocks.iter().any(|b| b.cols() != r) {
        return Err(TensorError::DimensionMismatch(
            "blocks disagree in column count".into(),
        ));
    }
    let mut gram = Matrix::zeros(r, r);
    for b in blocks {
        gemm(
            gram.as_faer_mut(),
            Accum::Add,
            b.as_faer().transpose(),
            b.as_faer(),
            1.0,
        );
    }
    let (w, spectrum) = gram_rotation(&gram)?;
    let out = blocks
        .iter()
        .map(|b| b.matmul(&w))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, spectrum))
}

/// Where a (sub)tensor sits inside a larger global tensor. The sketch matrix
/// rows are addressed by global unfolding column, so a block and the whole
/// tensor draw consistent slices of the same `Ω`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub global_shape: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl Placement {
    pub fn whole(shape: &[usize]) -> Self {
        Self {
            global_shape: shape.to_vec(),
            offsets: vec![0; shape.len()],
        }
    }
}

/// Minimum number of sketch rows generated per chunk.
pub const SKETCH_CHUNK: usize = 512;

/// `Z = unfold(t, n) · Ω`, with `Ω` the Gaussian matrix of `seed` whose rows
/// are indexed by global mode-`n` unfolding column. `Ω` is generated on the
/// fly in row chunks and never materialized in full.
pub fn sketch_unfolding(
    t: &DenseTensor,
    n: usize,
    r_tilde: usize,
    seed: SeedSpec,
    placement: &Placement,
) -> Result<Matrix> {
    let shape = t.shape();
    if n >= shape.len() {
        return Err(TensorError::ModeOutOfRange {
            mode: n,
            order: shape.len(),
        });
    }
    if placement.global_shape.len() != shape.len()
        || placement.offsets.len() != shape.len()
        || shape
            .iter()
            .zip(&placement.offsets)
            .zip(&placement.global_shape)
            .any(|((&d, &o), &g)| d + o > g)
    {
        return Err(TensorError::DimensionMismatch(format!(
            "block {shape:?} does not fit placement {placement:?}"
        )));
    }
    let (left, dim, right) = mode_layout(shape, n);
    let chunk = SKETCH_CHUNK.max(dim);

    // global strides of the modes other than n, ascending
    let mut gstride = vec![0u64; shape.len()];
    let mut s = 1u64;
    for (k, &g) in placement.global_shape.iter().enumerate() {
        if k != n {
            gstride[k] = s;
            s *= g as u64;
        }
    }
    let global_col = |mut l: usize, mut r: usize| -> u64 {
        let mut g = 0u64;
        for k in 0..n {
            let i = l % shape[k];
            l /= shape[k];
            g += (placement.offsets[k] + i) as u64 * gstride[k];
        }
        for k in n + 1..shape.len() {
            let i = r % shape[k];
            r /= shape[k];
            g += (placement.offsets[k] + i) as u64 * gstride[k];
        }
        g
    };

    let mut field = GaussianField::new(seed);
    let mut z = Matrix::zeros(dim, r_tilde);
    let mut rows: Vec<u64> = Vec::with_capacity(chunk);
    let mut omega = Matrix::zeros(0, r_tilde);
    let regen = |rows: &[u64], omega: &mut Matrix, field: &mut GaussianField| {
        *omega = Matrix::zeros(rows.len(), r_tilde);
        for c in 0..r_tilde {
            field.fill(rows, c as u64, omega.col_mut(c));
        }
    };

    if left == 1 {
        let y = MatRef::from_column_major_slice(t.data(), dim, right);
        let mut r0 = 0;
        while r0 < right {
            let r1 = (r0 + chunk).min(right);
            rows.clear();
            rows.extend((r0..r1).map(|r| global_col(0, r)));
            regen(&rows, &mut omega, &mut field);
            gemm(
                z.as_faer_mut(),
                Accum::Add,
                y.subcols(r0, r1 - r0),
                omega.as_faer(),
                1.0,
            );
            r0 = r1;
        }
    } else {
        for (r, slab) in t.data().chunks_exact(left * dim).enumerate() {
            let slab = MatRef::from_column_major_slice(slab, left, dim);
            let mut l0 = 0;
            while l0 < left {
                let l1 = (l0 + chunk).min(left);
                rows.clear();
                rows.extend((l0..l1).map(|l| global_col(l, r)));
                regen(&rows, &mut omega, &mut field);
                gemm(
                    z.as_faer_mut(),
                    Accum::Add,
                    slab.subrows(l0, l1 - l0).transpose(),
                    omega.as_faer(),
                    1.0,
                );
                l0 = l1;
            }
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::unfold;

    #[test]
    fn gaussian_is_deterministic_and_stream_sensitive() {
        let s = SeedSpec::with_stream(7, 3);
        assert_eq!(gaussian_matrix(20, 4, s), gaussian_matrix(20, 4, s));
        assert_ne!(
            gaussian_matrix(20, 4, s),
            gaussian_matrix(20, 4, SeedSpec::with_stream(7, 4))
        );
    }

    #[test]
    fn gaussian_moments() {
        let m = gaussian_matrix(10_000, 10, SeedSpec::new(2024));
        let n = m.data().len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.9..=1.1).contains(&var), "var {var}");
    }

    #[test]
    fn gaussian_sub_block_matches_full_draw() {
        let s = SeedSpec::with_stream(1, 9);
        let full = gaussian_matrix(50, 3, s);
        let rows = [7u64, 8, 9, 30, 2];
        let part = gaussian_rows(&rows, 3, s);
        for (i, &r) in rows.iter().enumerate() {
            for j in 0..3 {
                assert_eq!(part.get(i, j), full.get(r as usize, j));
            }
        }
    }

    #[test]
    fn orthonormal_input_kept() {
        let q0 = orthonormal_basis(&gaussian_matrix(30, 4, SeedSpec::new(5)));
        let q = orthonormal_basis(&q0);
        assert!(q.gram().max_abs_diff(&Matrix::identity(4)) < 1e-12);
        let p0 = q0.matmul_t(&q0).unwrap();
        let p = q.matmul_t(&q).unwrap();
        assert!(p0.sub(&p).unwrap().frobenius_norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_columns_are_dropped() {
        let z = Matrix::from_row_major(3, 2, &[1., 2., 0., 0., 0., 0.]).unwrap();
        let q = orthonormal_basis(&z);
        assert_eq!(q.cols(), 1);
        assert!((q.get(0, 0).abs() - 1.0).abs() < 1e-15);
        assert!(q.get(1, 0).abs() < 1e-15 && q.get(2, 0).abs() < 1e-15);
    }

    #[test]
    fn projection_residual_of_random_matrix() {
        let z = gaussian_matrix(50, 5, SeedSpec::new(11));
        let q = orthonormal_basis(&z);
        let resid = z.sub(&q.matmul(&q.t_matmul(&z).unwrap()).unwrap()).unwrap();
        assert!(resid.frobenius_norm() < 1e-10);
    }

    #[test]
    fn range_finder_zero_matrix() {
        let q = range_finder(&Matrix::zeros(8, 6), 3, SeedSpec::new(1)).unwrap();
        assert_eq!(q.cols(), 0);
    }

    #[test]
    fn gram_orthonormalize_all_zero_is_error() {
        let blocks = vec![Matrix::zeros(4, 2), Matrix::zeros(3, 2)];
        assert!(matches!(
            gram_orthonormalize(&blocks),
            Err(TensorError::ZeroRank(_))
        ));
    }

    #[test]
    fn sketch_matches_explicit_product() {
        let t = DenseTensor::from_fn(&[4, 5, 3], |i| {
            ((i[0] * 13 + i[1] * 7 + i[2] * 3) % 11) as f64 - 5.0
        })
        .unwrap();
        let seed = SeedSpec::with_stream(3, 1);
        for n in 0..3 {
            let u = unfold(&t, n).unwrap();
            let omega = gaussian_matrix(u.cols(), 6, seed);
            let expected = u.matmul(&omega).unwrap();
            let z = sketch_unfolding(&t, n, 6, seed, &Placement::whole(t.shape())).unwrap();
            assert!(z.max_abs_diff(&expected) < 1e-12);
        }
    }

    #[test]
    fn canonical_basis_matches_block_gram_path() {
        let z = gaussian_matrix(40, 6, SeedSpec::new(12));
        let single = canonical_basis(&z).unwrap();
        let (blocks, _) = gram_orthonormalize(&[z.row_block(0, 17), z.row_block(17, 40)]).unwrap();
        let stacked = Matrix::vstack(&blocks).unwrap();
        assert_eq!(single.cols(), 6);
        assert!(single.max_abs_diff(&stacked) < 1e-10);
        assert!(canonical_basis(&Matrix::zeros(5, 2)).unwrap().cols() == 0);
    }
}
