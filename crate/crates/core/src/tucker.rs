//! Tucker models, the HOSVD baseline and the randomized Tucker compressors.

use crate::cp::{cp_reconstruct, CpModel};
use crate::error::{Result, TensorError};
use crate::linalg::{sym_eigen, thin_svd};
use crate::matrix::Matrix;
use crate::random::{canonical_basis, gaussian_matrix, orthonormal_basis, sketch_unfolding, Placement, SeedSpec};
use crate::tensor::{mode_gram, ttm, ttm_chain, unfold, DenseTensor};

const SKETCH_TAG: u64 = 0x736b_6574_6368; // "sketch"
const INIT_TAG: u64 = 0x696e_6974; // "init"

/// Seed of the sketch matrix used for `mode` during `pass` (zero-based).
/// Shared with the distributed executor so both draw the same `Ω`.
pub fn sketch_seed(seed: SeedSpec, pass: usize, mode: usize) -> SeedSpec {
    seed.derive(SKETCH_TAG).derive(pass as u64).derive(mode as u64)
}

/// Seed of the Gaussian starting factor for `mode` in the two-pass compressor.
pub fn init_seed(seed: SeedSpec, mode: usize) -> SeedSpec {
    seed.derive(INIT_TAG).derive(mode as u64)
}

/// `G ×_1 U^(1) ⋯ ×_N U^(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerModel {
    pub core: DenseTensor,
    pub factors: Vec<Matrix>,
}

impl TuckerModel {
    pub fn new(core: DenseTensor, factors: Vec<Matrix>) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(TensorError::DimensionMismatch(format!(
                "{} factors for an order-{} core",
                factors.len(),
                core.order()
            )));
        }
        for (n, (f, &r)) in factors.iter().zip(core.shape()).enumerate() {
            if f.cols() != r {
                return Err(TensorError::DimensionMismatch(format!(
                    "factor {n} has {} columns, core mode size is {r}",
                    f.cols()
                )));
            }
        }
        Ok(Self { core, factors })
    }

    /// Full dimensions `I_n` of the represented tensor.
    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    /// Multilinear rank of the core.
    pub fn ranks(&self) -> Vec<usize> {
        self.core.shape().to_vec()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    /// Squared Frobenius norm of the represented tensor, computed from the
    /// core and the factor Gram matrices.
    pub fn squared_norm(&self) -> Result<f64> {
        let grams: Vec<Matrix> = self.factors.iter().map(Matrix::gram).collect();
        let weighted = ttm_chain(&self.core, grams.iter().enumerate())?;
        self.core.inner(&weighted)
    }

    /// Exact Tucker form of a CP model: `A^(n) = Q_n R_n` with orthonormal
    /// `Q_n`, core `[[R_1, …, R_N]]`. The full tensor is never formed.
    pub fn from_cp(m: &CpModel) -> Result<Self> {
        let mut qs = Vec::with_capacity(m.order());
        let mut rs = Vec::with_capacity(m.order());
        for a in &m.factors {
            let q = orthonormal_basis(a);
            if q.cols() == 0 {
                return Err(TensorError::ZeroNorm);
            }
            rs.push(q.t_matmul(a)?);
            qs.push(q);
        }
        Self::new(cp_reconstruct(&CpModel::new(rs)?)?, qs)
    }
}

pub fn reconstruct(m: &TuckerModel) -> Result<DenseTensor> {
    ttm_chain(&m.core, m.factors.iter().enumerate())
}

fn validate_ranks(dims: &[usize], ranks: &[usize]) -> Result<()> {
    if ranks.len() != dims.len() {
        return Err(TensorError::DimensionMismatch(format!(
            "{} ranks for an order-{} tensor",
            ranks.len(),
            dims.len()
        )));
    }
    for (n, (&r, &d)) in ranks.iter().zip(dims).enumerate() {
        if r == 0 {
            return Err(TensorError::InvalidArgument(format!("rank of mode {n} is zero")));
        }
        if r > d {
            return Err(TensorError::RankExceedsDimension {
                mode: n,
                rank: r,
                dim: d,
            });
        }
    }
    Ok(())
}

/// Sketch width `min(R_n + p, I_n)`: a wider sketch cannot add range and
/// would make the two-pass start expand the mode.
pub fn sketch_width(rank: usize, oversample: usize, dim: usize) -> usize {
    (rank + oversample).min(dim)
}

fn project_all(y: &DenseTensor, factors: &[Matrix], skip: Option<usize>) -> Result<DenseTensor> {
    let transposed: Vec<(usize, Matrix)> = factors
        .iter()
        .enumerate()
        .filter(|(p, _)| Some(*p) != skip)
        .map(|(p, u)| (p, u.transpose()))
        .collect();
    ttm_chain(y, transposed.iter().map(|(p, m)| (*p, m)))
}

/// Truncated higher-order SVD: factor `n` holds the leading `R_n` left
/// singular vectors of the mode-`n` unfolding.
pub fn hosvd(y: &DenseTensor, ranks: &[usize]) -> Result<TuckerModel> {
    validate_ranks(y.shape(), ranks)?;
    let mut factors = Vec::with_capacity(ranks.len());
    for (n, &r) in ranks.iter().enumerate() {
        let dim = y.shape()[n];
        let others = y.numel() / dim;
        let mut u = if others > dim {
            let eig = sym_eigen(&mode_gram(y, n)?)?;
            eig.vectors.select_cols(&(0..r).collect::<Vec<_>>())
        } else {
            let svd = thin_svd(&unfold(y, n)?)?;
            svd.u.select_cols(&(0..r).collect::<Vec<_>>())
        };
        u.canonicalize_signs();
        factors.push(u);
    }
    let core = project_all(y, &factors, None)?;
    TuckerModel::new(core, factors)
}

fn checked_basis(z: &Matrix, mode: usize) -> Result<Matrix> {
    let u = canonical_basis(z)?;
    if u.cols() == 0 {
        return Err(TensorError::ZeroRank(format!("sketch of mode {mode} vanished")));
    }
    Ok(u)
}

/// Randomized Tucker compression: one range-finder pass per mode, shrinking
/// the working tensor after each mode. Factor `n` has up to
/// `min(R_n + p, I_n)` orthonormal columns (fewer if the sketch is numerically
/// rank deficient).
pub fn rand_tucker(
    y: &DenseTensor,
    ranks: &[usize],
    oversample: usize,
    seed: SeedSpec,
) -> Result<TuckerModel> {
    validate_ranks(y.shape(), ranks)?;
    let mut cur = y.clone();
    let mut factors = Vec::with_capacity(ranks.len());
    for (n, &r) in ranks.iter().enumerate() {
        let z = sketch_unfolding(
            &cur,
            n,
            sketch_width(r, oversample, y.shape()[n]),
            sketch_seed(seed, 0, n),
            &Placement::whole(cur.shape()),
        )?;
        let u = checked_basis(&z, n)?;
        cur = ttm(&cur, &u.transpose(), n)?;
        factors.push(u);
    }
    TuckerModel::new(cur, factors)
}

/// Two-pass randomized Tucker compression: starting from Gaussian factors,
/// each mode's basis is re-estimated twice from the tensor projected onto the
/// other modes' current factors.
pub fn rand_tucker_2i(
    y: &DenseTensor,
    ranks: &[usize],
    oversample: usize,
    seed: SeedSpec,
) -> Result<TuckerModel> {
    validate_ranks(y.shape(), ranks)?;
    let mut factors: Vec<Matrix> = ranks
        .iter()
        .enumerate()
        .map(|(n, &r)| {
            let d = y.shape()[n];
            gaussian_matrix(d, sketch_width(r, oversample, d), init_seed(seed, n))
        })
        .collect();
    let mut projected = None;
    for pass in 0..2 {
        for n in 0..ranks.len() {
            let x = projected.insert(project_all(y, &factors, Some(n))?);
            let z = sketch_unfolding(
                x,
                n,
                sketch_width(ranks[n], oversample, y.shape()[n]),
                sketch_seed(seed, pass, n),
                &Placement::whole(x.shape()),
            )?;
            factors[n] = checked_basis(&z, n)?;
        }
    }
    // the last update already projected every other mode onto its final factor
    let x = projected.ok_or_else(|| TensorError::InvalidArgument("empty multilinear rank".into()))?;
    let last = ranks.len() - 1;
    let core = ttm(&x, &factors[last].transpose(), last)?;
    TuckerModel::new(core, factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::gaussian_matrix;
    use crate::tensor::fit;

    fn low_rank(dims: &[usize], ranks: &[usize], seed: u64) -> DenseTensor {
        let core = DenseTensor::new(
            ranks.to_vec(),
            gaussian_matrix(ranks.iter().product(), 1, SeedSpec::new(seed)).into_data(),
        )
        .unwrap();
        let factors = dims
            .iter()
            .zip(ranks)
            .enumerate()
            .map(|(n, (&d, &r))| gaussian_matrix(d, r, SeedSpec::with_stream(seed, n as u64 + 1)))
            .collect();
        reconstruct(&TuckerModel::new(core, factors).unwrap()).unwrap()
    }

    #[test]
    fn reconstruct_identity_factors() {
        let t = low_rank(&[3, 4, 2], &[2, 2, 2], 1);
        let m = TuckerModel::new(
            t.clone(),
            t.shape().iter().map(|&d| Matrix::identity(d)).collect(),
        )
        .unwrap();
        assert_eq!(reconstruct(&m).unwrap(), t);
    }

    #[test]
    fn reconstruct_order_two_is_matrix_sandwich() {
        let g = gaussian_matrix(2, 3, SeedSpec::new(4));
        let u1 = gaussian_matrix(5, 2, SeedSpec::new(5));
        let u2 = gaussian_matrix(4, 3, SeedSpec::new(6));
        let m = TuckerModel::new(DenseTensor::from_matrix(&g).unwrap(), vec![u1.clone(), u2.clone()])
            .unwrap();
        let expected = u1.matmul(&g).unwrap().matmul_t(&u2).unwrap();
        let got = reconstruct(&m).unwrap();
        assert!(got.data().iter().zip(expected.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn reconstruct_zero_core() {
        let m = TuckerModel::new(
            DenseTensor::zeros(&[2, 2]).unwrap(),
            vec![gaussian_matrix(3, 2, SeedSpec::new(1)), gaussian_matrix(4, 2, SeedSpec::new(2))],
        )
        .unwrap();
        assert!(reconstruct(&m).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hosvd_exact_and_full_rank() {
        let y = low_rank(&[8, 9, 7], &[2, 3, 2], 3);
        let m = hosvd(&y, &[2, 3, 2]).unwrap();
        assert!(fit(&y, &reconstruct(&m).unwrap()).unwrap() > 1.0 - 1e-10);
        let full = hosvd(&y, &[8, 9, 7]).unwrap();
        assert!(reconstruct(&full).unwrap().max_abs_diff(&y) < 1e-12 * y.frobenius_norm());
        for u in &m.factors {
            assert!(u.gram().max_abs_diff(&Matrix::identity(u.cols())) < 1e-10);
        }
    }

    #[test]
    fn hosvd_rank_validation() {
        let y = low_rank(&[3, 3], &[1, 1], 4);
        assert!(matches!(
            hosvd(&y, &[4, 1]),
            Err(TensorError::RankExceedsDimension { mode: 0, .. })
        ));
    }

    #[test]
    fn randomized_compressors_capture_exact_rank() {
        let y = low_rank(&[20, 18, 16], &[3, 4, 2], 5);
        let seed = SeedSpec::new(77);
        let a = rand_tucker(&y, &[3, 4, 2], 5, seed).unwrap();
        let b = rand_tucker_2i(&y, &[3, 4, 2], 5, seed).unwrap();
        for m in [&a, &b] {
            assert!(fit(&y, &reconstruct(m).unwrap()).unwrap() > 1.0 - 1e-8);
            for u in &m.factors {
                assert!(u.gram().max_abs_diff(&Matrix::identity(u.cols())) < 1e-10);
            }
        }
        assert_eq!(a, rand_tucker(&y, &[3, 4, 2], 5, seed).unwrap());
        assert_eq!(b, rand_tucker_2i(&y, &[3, 4, 2], 5, seed).unwrap());
    }
}
