//! Synthetic tensors with known CP or Tucker structure, and additive noise
//! at an exact signal-to-noise ratio.

use bigtensor_core::cp::{cp_reconstruct, CpModel};
use bigtensor_core::random::gaussian_matrix;
use bigtensor_core::tucker::reconstruct;
use bigtensor_core::{DenseTensor, Matrix, Result, SeedSpec, TensorError, TuckerModel};
use rand::seq::index::sample;
use rand_distr::{Distribution, Exp};

const NOISE_TAG: u64 = 0x6e6f_6973_65; // "noise"

/// Distribution of the latent factor entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorDist {
    Normal,
    /// Exponential with the given mean; a `zero_fraction` share of the
    /// entries of every factor is then set to zero at random positions.
    Exponential { mean: f64, zero_fraction: f64 },
}

fn exponential_factor(rows: usize, cols: usize, mean: f64, zero_fraction: f64, seed: SeedSpec) -> Result<Matrix> {
    if !(mean > 0.0) || !(0.0..1.0).contains(&zero_fraction) {
        return Err(TensorError::InvalidArgument(format!(
            "exponential factors need mean > 0 and zero fraction in [0, 1), got {mean}, {zero_fraction}"
        )));
    }
    let exp = Exp::new(1.0 / mean).map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
    let mut rng = seed.rng();
    let mut data: Vec<f64> = (0..rows * cols).map(|_| exp.sample(&mut rng)).collect();
    let zeros = (zero_fraction * data.len() as f64).round() as usize;
    for k in sample(&mut rng, data.len(), zeros) {
        data[k] = 0.0;
    }
    Matrix::from_col_major(rows, cols, data)
}

/// Ground-truth CP model with `rank` components.
pub fn gen_cp_model(dims: &[usize], rank: usize, dist: FactorDist, seed: SeedSpec) -> Result<CpModel> {
    if rank == 0 || dims.is_empty() || dims.contains(&0) {
        return Err(TensorError::InvalidArgument(format!(
            "cannot generate rank {rank} factors for dims {dims:?}"
        )));
    }
    let factors = dims
        .iter()
        .enumerate()
        .map(|(n, &d)| {
            let s = seed.derive(n as u64);
            match dist {
                FactorDist::Normal => Ok(gaussian_matrix(d, rank, s)),
                FactorDist::Exponential { mean, zero_fraction } => {
                    exponential_factor(d, rank, mean, zero_fraction, s)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    CpModel::new(factors)
}

/// Noise-free `Y* = [[A]]` and its ground truth.
pub fn gen_cp_tensor(
    dims: &[usize],
    rank: usize,
    dist: FactorDist,
    seed: SeedSpec,
) -> Result<(DenseTensor, CpModel)> {
    let truth = gen_cp_model(dims, rank, dist, seed)?;
    Ok((cp_reconstruct(&truth)?, truth))
}

/// Noise-free Tucker tensor with standard normal core and factors.
pub fn gen_tucker_tensor(dims: &[usize], ranks: &[usize], seed: SeedSpec) -> Result<(DenseTensor, TuckerModel)> {
    if ranks.len() != dims.len() || ranks.contains(&0) {
        return Err(TensorError::InvalidArgument(format!(
            "multilinear rank {ranks:?} does not fit dims {dims:?}"
        )));
    }
    let core_len: usize = ranks.iter().product();
    let core = DenseTensor::new(ranks.to_vec(), gaussian_matrix(core_len, 1, seed.derive(u64::MAX)).into_data())?;
    let factors = dims
        .iter()
        .zip(ranks)
        .enumerate()
        .map(|(n, (&d, &r))| gaussian_matrix(d, r, seed.derive(n as u64)))
        .collect();
    let truth = TuckerModel::new(core, factors)?;
    Ok((reconstruct(&truth)?, truth))
}

/// `Y + σE` with `E` standard normal and `σ` scaled so the realized SNR is
/// exactly `snr_db`. `+∞` returns `Y` unchanged.
pub fn add_noise(y: &DenseTensor, snr_db: f64, seed: SeedSpec) -> Result<DenseTensor> {
    let signal = y.squared_norm();
    if signal == 0.0 {
        return Err(TensorError::ZeroNorm);
    }
    if snr_db == f64::INFINITY {
        return Ok(y.clone());
    }
    if !snr_db.is_finite() {
        return Err(TensorError::InvalidArgument(format!("SNR must be finite or +inf, got {snr_db}")));
    }
    let e = gaussian_matrix(y.numel(), 1, seed.derive(NOISE_TAG));
    let noise: f64 = e.data().iter().map(|x| x * x).sum();
    let sigma = (signal / (noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let data = y.data().iter().zip(e.data()).map(|(a, b)| a + sigma * b).collect();
    DenseTensor::new(y.shape().to_vec(), data)
}

/// Realized SNR in dB of `noisy` relative to `clean`.
pub fn realized_snr(clean: &DenseTensor, noisy: &DenseTensor) -> Result<f64> {
    let noise = noisy.sub(clean)?.squared_norm();
    Ok(10.0 * (clean.squared_norm() / noise).log10())
}
