//! Recovery metrics: per-component SIR after resolving the CP permutation,
//! and fits computed between CP models without reconstruction.

use bigtensor_core::cp::CpModel;
use bigtensor_core::{Result, TensorError};

/// SIR reported for an exact match.
pub const SIR_CAP_DB: f64 = 300.0;

fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // a constant vector leaves only rounding noise after centering
    if !(var.sqrt() > 1e-14 * scale) {
        return None;
    }
    let sd = var.sqrt();
    Some(x.iter().map(|v| (v - mean) / sd).collect())
}

/// `20·log10(‖a‖ / ‖a − â‖)` after both vectors are standardized to zero
/// mean and unit variance and `â` is sign-aligned with `a`; capped at
/// [`SIR_CAP_DB`].
pub fn sir(a: &[f64], a_hat: &[f64]) -> Result<f64> {
    if a.len() != a_hat.len() || a.is_empty() {
        return Err(TensorError::DimensionMismatch(format!(
            "SIR of vectors of length {} and {}",
            a.len(),
            a_hat.len()
        )));
    }
    let (Some(a), Some(mut b)) = (standardize(a), standardize(a_hat)) else {
        return Err(TensorError::InvalidArgument("SIR of a zero-variance vector".into()));
    };
    if a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() < 0.0 {
        b.iter_mut().for_each(|v| *v = -*v);
    }
    let signal = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let err = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    if err == 0.0 {
        return Ok(SIR_CAP_DB);
    }
    Ok((20.0 * (signal / err).log10()).min(SIR_CAP_DB))
}

fn abs_correlation(a: &[f64], b: &[f64]) -> f64 {
    match (standardize(a), standardize(b)) {
        (Some(a), Some(b)) => (a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64).abs(),
        _ => 0.0,
    }
}

/// Result of aligning estimated components with the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatch {
    /// Truth component `r` is matched with estimate component `permutation[r]`.
    pub permutation: Vec<usize>,
    /// `sir[n][r]`: SIR of column `r` of truth factor `n`.
    pub sir: Vec<Vec<f64>>,
    pub mean_sir: f64,
    pub min_sir: f64,
}

/// Greedy matching on the absolute correlation summed over modes, one
/// permutation shared by all modes.
pub fn match_factors(truth: &CpModel, est: &CpModel) -> Result<FactorMatch> {
    if truth.rank() != est.rank() {
        return Err(TensorError::DimensionMismatch(format!(
            "truth has {} components, estimate {}",
            truth.rank(),
            est.rank()
        )));
    }
    if truth.dims() != est.dims() {
        return Err(TensorError::DimensionMismatch(format!(
            "truth dims {:?}, estimate dims {:?}",
            truth.dims(),
            est.dims()
        )));
    }
    let rank = truth.rank();
    let mut score = vec![vec![0.0; rank]; rank];
    for (t, e) in truth.factors.iter().zip(&est.factors) {
        for (r, row) in score.iter_mut().enumerate() {
            for (s, v) in row.iter_mut().enumerate() {
                *v += abs_correlation(t.col(r), e.col(s));
            }
        }
    }
    let mut permutation = vec![usize::MAX; rank];
    let mut taken = vec![false; rank];
    for _ in 0..rank {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (r, row) in score.iter().enumerate() {
            if permutation[r] != usize::MAX {
                continue;
            }
            for (s, &v) in row.iter().enumerate() {
                if !taken[s] && v > best.0 {
                    best = (v, r, s);
                }
            }
        }
        permutation[best.1] = best.2;
        taken[best.2] = true;
    }
    let sir = truth
        .factors
        .iter()
        .zip(&est.factors)
        .map(|(t, e)| (0..rank).map(|r| sir(t.col(r), e.col(permutation[r]))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = sir.iter().flatten().copied().collect();
    Ok(FactorMatch {
        permutation,
        mean_sir: all.iter().sum::<f64>() / all.len() as f64,
        min_sir: all.iter().copied().fold(f64::INFINITY, f64::min),
        sir,
    })
}

/// `1 − ‖X − X̂‖/‖X‖` for two CP models via their Gram and cross-Gram
/// matrices, without forming either tensor.
pub fn cp_model_fit(truth: &CpModel, est: &CpModel) -> Result<f64> {
    if truth.dims() != est.dims() {
        return Err(TensorError::DimensionMismatch(format!(
            "truth dims {:?}, estimate dims {:?}",
            truth.dims(),
            est.dims()
        )));
    }
    let cross = truth
        .factors
        .iter()
        .zip(&est.factors)
        .map(|(t, e)| t.t_matmul(e))
        .collect::<Result<Vec<_>>>()?;
    let mut prod = vec![1.0; truth.rank() * est.rank()];
    for c in &cross {
        prod.iter_mut().zip(c.data()).for_each(|(p, &x)| *p *= x);
    }
    let inner: f64 = prod.iter().sum();
    let xx = truth.squared_norm();
    if xx == 0.0 {
        return Err(TensorError::ZeroNorm);
    }
    let resid = (xx - 2.0 * inner + est.squared_norm()).max(0.0).sqrt();
    Ok(1.0 - resid / xx.sqrt())
}
