//! CP models and first-order decomposition engines (ALS, MU, HALS) on full
//! tensors. The alternating driver is shared with the Tucker-compressed engine
//! in [`crate::ffcp`]; only the source of the `Y_(n) B^(n)` term differs.

use crate::error::{Result, TensorError};
use crate::linalg::solve_right_spd;
use crate::matrix::Matrix;
use crate::random::{gaussian_matrix, SeedSpec};
use crate::tensor::{hadamard_of_grams, khatri_rao_skip, mttkrp, DenseTensor};
use std::time::Instant;

/// Denominator guard of the multiplicative update.
pub const MU_EPS: f64 = 1e-16;

/// HALS skips a column whose diagonal Gram entry is below this.
pub const HALS_MIN_DIAG: f64 = 1e-15;

const FACTOR_TAG: u64 = 0x6670_6163; // "fact"

/// `Σ_r a_r^(1) ∘ ⋯ ∘ a_r^(N)` with the weights absorbed into the last factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    pub factors: Vec<Matrix>,
}

impl CpModel {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(TensorError::InvalidArgument("a CP model needs at least one factor".into()));
        };
        let r = first.cols();
        if r == 0 {
            return Err(TensorError::InvalidArgument("CP rank must be at least 1".into()));
        }
        if factors.iter().any(|f| f.cols() != r) {
            return Err(TensorError::DimensionMismatch(
                "factor matrices disagree in column count".into(),
            ));
        }
        Ok(Self { factors })
    }

    pub fn rank(&self) -> usize {
        self.factors[0].cols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    /// Rescales every column of the leading factors to unit norm and absorbs
    /// the weights into the last factor.
    pub fn normalized(&self) -> CpModel {
        let mut factors = self.factors.clone();
        let last = factors.len() - 1;
        let mut weights = vec![1.0; self.rank()];
        for f in &mut factors[..last] {
            for (r, w) in weights.iter_mut().enumerate() {
                let col = f.col_mut(r);
                let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    col.iter_mut().for_each(|x| *x /= norm);
                    *w *= norm;
                }
            }
        }
        for (r, w) in weights.iter().enumerate() {
            factors[last].col_mut(r).iter_mut().for_each(|x| *x *= w);
        }
        CpModel { factors }
    }

    /// Squared Frobenius norm of the represented tensor.
    pub fn squared_norm(&self) -> f64 {
        let grams: Vec<Matrix> = self.factors.iter().map(Matrix::gram).collect();
        hadamard_of_grams(&grams, usize::MAX).data().iter().sum()
    }
}

/// Iteration budget and fit-change tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_iters: usize,
    pub fit_tol: f64,
}

impl StopRule {
    pub fn new(max_iters: usize, fit_tol: f64) -> Result<Self> {
        if max_iters == 0 {
            return Err(TensorError::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(fit_tol >= 0.0) {
            return Err(TensorError::InvalidArgument("fit_tol must be nonnegative".into()));
        }
        Ok(Self { max_iters, fit_tol })
    }
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            fit_tol: 1e-6,
        }
    }
}

/// One sweep of an alternating engine.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub iteration: usize,
    pub fit: f64,
    pub mode_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CpOutcome {
    pub model: CpModel,
    pub trace: Vec<SweepRecord>,
}

impl CpOutcome {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn final_fit(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.fit)
    }

    pub fn fit_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.fit).collect()
    }
}

/// Factor update applied once per mode per sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    /// `A ← YB (BᵀB)⁻¹`
    Als,
    /// `A ← A ⊛ YB ⊘ (A BᵀB)`
    Mu,
    /// Column-wise hierarchical ALS; `project` keeps the factors nonnegative.
    Hals { project: bool },
}

impl UpdateRule {
    pub fn is_nonnegative(self) -> bool {
        matches!(self, UpdateRule::Mu | UpdateRule::Hals { project: true })
    }
}

/// Callback invoked after every sweep with the current (unnormalized) factors.
pub type Observer<'a> = &'a mut dyn FnMut(&SweepRecord, &[Matrix]);

pub fn cp_reconstruct(m: &CpModel) -> Result<DenseTensor> {
    let dims = m.dims();
    // unfold(Y, 0) = A^(1) B^(1)ᵀ and the mode-0 unfolding shares storage order
    let b = khatri_rao_skip(&m.factors, 0)?;
    let y0 = m.factors[0].matmul_t(&b)?;
    DenseTensor::new(dims, y0.into_data())
}

/// `(Y_(n) B^(n), B^(n)ᵀ B^(n))`; the gradient of `½‖Y_(n) − A B^(n)ᵀ‖²`
/// with respect to `A = A^(n)` is `A·BtB − YB`.
pub fn gradient_terms(y: &DenseTensor, factors: &[Matrix], n: usize) -> Result<(Matrix, Matrix)> {
    let yb = mttkrp(y, factors, n)?;
    let grams: Vec<Matrix> = factors.iter().map(Matrix::gram).collect();
    Ok((yb, hadamard_of_grams(&grams, n)))
}

/// Starting factors: standard normal, or its absolute value for the
/// nonnegative rules.
pub fn init_factors(dims: &[usize], rank: usize, nonneg: bool, seed: SeedSpec) -> Vec<Matrix> {
    dims.iter()
        .enumerate()
        .map(|(n, &d)| {
            let g = gaussian_matrix(d, rank, seed.derive(FACTOR_TAG).derive(n as u64));
            if nonneg {
                g.map(f64::abs)
            } else {
                g
            }
        })
        .collect()
}

/// Supplies the data-dependent half of the gradient.
pub(crate) trait GradientSource {
    /// `‖Y‖²` of the tensor being approximated.
    fn squared_norm(&self) -> f64;
    /// `Y_(n) B^(n)` for the current factors.
    fn yb(&mut self, factors: &[Matrix], n: usize) -> Result<Matrix>;
    /// Called after factor `n` changed.
    fn factor_updated(&mut self, _factors: &[Matrix], _n: usize) -> Result<()> {
        Ok(())
    }
}

struct FullTensor<'a>(&'a DenseTensor, f64);

impl GradientSource for FullTensor<'_> {
    fn squared_norm(&self) -> f64 {
        self.1
    }
    fn yb(&mut self, factors: &[Matrix], n: usize) -> Result<Matrix> {
        mttkrp(self.0, factors, n)
    }
}

/// Post-update hook (used for the sparsity operator).
pub(crate) type PostUpdate<'a> = &'a dyn Fn(&mut Matrix);

/// Applies one update rule to `a` given the gradient terms.
pub(crate) fn apply_rule(
    rule: UpdateRule,
    a: &mut Matrix,
    yb: &Matrix,
    btb: &Matrix,
) -> Result<()> {
    match rule {
        UpdateRule::Als => {
            *a = solve_right_spd(yb, btb)?;
        }
        UpdateRule::Mu => {
            let denom = a.matmul(btb)?;
            for ((x, &num), &den) in a.data_mut().iter_mut().zip(yb.data()).zip(denom.data()) {
                *x *= num / den.max(MU_EPS);
            }
        }
        UpdateRule::Hals { project } => {
            let (rows, rank) = a.shape();
            let mut at = vec![0.0; rows];
            for r in 0..rank {
                let trr = btb.get(r, r);
                if trr < HALS_MIN_DIAG {
                    continue;
                }
                at.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..rank {
                    let t = btb.get(k, r);
                    if t != 0.0 {
                        for (v, &x) in at.iter_mut().zip(a.col(k)) {
                            *v += x * t;
                        }
                    }
                }
                let q = yb.col(r);
                let col = a.col_mut(r);
                for i in 0..rows {
                    let v = col[i] + (q[i] - at[i]) / trr;
                    col[i] = if project { v.max(0.0) } else { v };
                }
            }
        }
    }
    Ok(())
}

/// Shared alternating driver. Returns the final factors and the sweep trace.
pub(crate) fn run_alternating(
    source: &mut dyn GradientSource,
    mut factors: Vec<Matrix>,
    rule: UpdateRule,
    stop: StopRule,
    post: Option<PostUpdate<'_>>,
    mut observer: Option<Observer<'_>>,
) -> Result<(Vec<Matrix>, Vec<SweepRecord>)> {
    let order = factors.len();
    let norm_sq = source.squared_norm();
    if norm_sq <= 0.0 {
        return Err(TensorError::ZeroNorm);
    }
    let norm = norm_sq.sqrt();
    let mut grams: Vec<Matrix> = factors.iter().map(Matrix::gram).collect();
    let mut trace: Vec<SweepRecord> = Vec::new();
    for iteration in 0..stop.max_iters {
        let mut mode_seconds = Vec::with_capacity(order);
        let mut last_yb = None;
        for n in 0..order {
            let start = Instant::now();
            let yb = source.yb(&factors, n)?;
            let btb = hadamard_of_grams(&grams, n);
            apply_rule(rule, &mut factors[n], &yb, &btb)?;
            if let Some(post) = post {
                post(&mut factors[n]);
            }
            grams[n] = factors[n].gram();
            source.factor_updated(&factors, n)?;
            mode_seconds.push(start.elapsed().as_secs_f64());
            if n == order - 1 {
                last_yb = Some(yb);
            }
        }
        // ‖Y − Ŷ‖² = ‖Y‖² − 2⟨Y, Ŷ⟩ + ‖Ŷ‖², with ⟨Y, Ŷ⟩ = Σ A^(N) ⊛ Y_(N) B^(N)
        let yb = last_yb.expect("order ≥ 1");
        let inner: f64 = factors[order - 1]
            .data()
            .iter()
            .zip(yb.data())
            .map(|(a, b)| a * b)
            .sum();
        let model_sq: f64 = hadamard_of_grams(&grams, usize::MAX).data().iter().sum();
        let resid = (norm_sq - 2.0 * inner + model_sq).max(0.0).sqrt();
        let fit = 1.0 - resid / norm;
        let record = SweepRecord {
            iteration,
            fit,
            mode_seconds,
        };
        if let Some(obs) = observer.as_mut() {
            obs(&record, &factors);
        }
        let converged = trace
            .last()
            .is_some_and(|prev: &SweepRecord| (prev.fit - fit).abs() < stop.fit_tol);
        trace.push(record);
        if converged {
            break;
        }
    }
    Ok((factors, trace))
}

fn check_rank(rank: usize) -> Result<()> {
    if rank == 0 {
        return Err(TensorError::InvalidArgument("CP rank must be at least 1".into()));
    }
    Ok(())
}

fn check_nonnegative(y: &DenseTensor) -> Result<()> {
    if let Some((index, &value)) = y.data().iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(TensorError::Negative { index, value });
    }
    Ok(())
}

/// Direct CP decomposition of a full tensor with the chosen update rule.
pub fn cp_decompose(
    y: &DenseTensor,
    rank: usize,
    rule: UpdateRule,
    stop: StopRule,
    seed: SeedSpec,
    observer: Option<Observer<'_>>,
) -> Result<CpOutcome> {
    check_rank(rank)?;
    // the multiplicative rule needs a nonnegative numerator; HALS projects
    // every column update and tolerates noisy (signed) data
    if rule == UpdateRule::Mu {
        check_nonnegative(y)?;
    }
    let init = init_factors(y.shape(), rank, rule.is_nonnegative(), seed);
    let mut source = FullTensor(y, y.squared_norm());
    let (factors, trace) = run_alternating(&mut source, init, rule, stop, None, observer)?;
    Ok(CpOutcome {
        model: CpModel::new(factors)?.normalized(),
        trace,
    })
}

pub fn cp_als(y: &DenseTensor, rank: usize, stop: StopRule, seed: SeedSpec) -> Result<CpOutcome> {
    cp_decompose(y, rank, UpdateRule::Als, stop, seed, None)
}

/// Nonnegative CP by multiplicative updates; `y` must be entrywise nonnegative.
pub fn cp_mu(y: &DenseTensor, rank: usize, stop: StopRule, seed: SeedSpec) -> Result<CpOutcome> {
    cp_decompose(y, rank, UpdateRule::Mu, stop, seed, None)
}

/// Nonnegative CP by HALS. `y` may have negative (noise) entries.
pub fn cp_hals(y: &DenseTensor, rank: usize, stop: StopRule, seed: SeedSpec) -> Result<CpOutcome> {
    cp_decompose(y, rank, UpdateRule::Hals { project: true }, stop, seed, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{fit, unfold};

    fn ones_model(dims: &[usize]) -> CpModel {
        CpModel::new(dims.iter().map(|&d| Matrix::from_fn(d, 1, |_, _| 1.0)).collect()).unwrap()
    }

    #[test]
    fn reconstruct_rank_one_ones() {
        let t = cp_reconstruct(&ones_model(&[2, 3, 4])).unwrap();
        assert_eq!(t.shape(), &[2, 3, 4]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn reconstruct_order_two() {
        let a = gaussian_matrix(4, 2, SeedSpec::new(1));
        let b = gaussian_matrix(3, 2, SeedSpec::new(2));
        let t = cp_reconstruct(&CpModel::new(vec![a.clone(), b.clone()]).unwrap()).unwrap();
        let expected = a.matmul_t(&b).unwrap();
        assert!(t.data().iter().zip(expected.data()).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn reconstruct_zero_factors() {
        let m = CpModel::new(vec![Matrix::zeros(2, 3), Matrix::zeros(3, 3)]).unwrap();
        assert!(cp_reconstruct(&m).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unfolding_convention_lock() {
        let factors: Vec<Matrix> = [3, 4, 2, 3]
            .iter()
            .enumerate()
            .map(|(n, &d)| gaussian_matrix(d, 2, SeedSpec::with_stream(9, n as u64)))
            .collect();
        let m = CpModel::new(factors.clone()).unwrap();
        let t = cp_reconstruct(&m).unwrap();
        for n in 0..4 {
            let b = khatri_rao_skip(&factors, n).unwrap();
            let expected = factors[n].matmul_t(&b).unwrap();
            assert!(unfold(&t, n).unwrap().max_abs_diff(&expected) < 1e-12);
        }
    }

    #[test]
    fn normalization_preserves_tensor() {
        let factors: Vec<Matrix> = [3, 4, 5]
            .iter()
            .enumerate()
            .map(|(n, &d)| gaussian_matrix(d, 3, SeedSpec::with_stream(4, n as u64)))
            .collect();
        let m = CpModel::new(factors).unwrap();
        let nm = m.normalized();
        for f in &nm.factors[..2] {
            for norm in f.column_norms() {
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
        let a = cp_reconstruct(&m).unwrap();
        let b = cp_reconstruct(&nm).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        assert!((m.squared_norm() - a.squared_norm()).abs() < 1e-9 * a.squared_norm());
    }

    #[test]
    fn stop_rule_validation() {
        assert!(StopRule::new(0, 1e-6).is_err());
        assert!(StopRule::new(10, -1.0).is_err());
        assert!(StopRule::new(10, 0.0).is_ok());
    }

    #[test]
    fn mu_rejects_negative_input_hals_projects_it() {
        let y = DenseTensor::new(vec![2, 2], vec![1.0, -1.0, 0.0, 2.0]).unwrap();
        let stop = StopRule::new(5, 0.0).unwrap();
        assert!(matches!(
            cp_mu(&y, 1, stop, SeedSpec::new(1)),
            Err(TensorError::Negative { index: 1, .. })
        ));
        let out = cp_hals(&y, 1, stop, SeedSpec::new(1)).unwrap();
        assert!(out.model.factors.iter().all(|f| f.min_entry() >= 0.0));
    }

    #[test]
    fn als_recovers_rank_one() {
        let truth = CpModel::new(vec![
            Matrix::from_col_major(3, 1, vec![1., 2., 3.]).unwrap(),
            Matrix::from_col_major(2, 1, vec![-1., 0.5]).unwrap(),
            Matrix::from_col_major(4, 1, vec![2., 1., 0., 1.]).unwrap(),
        ])
        .unwrap();
        let y = cp_reconstruct(&truth).unwrap();
        let out = cp_als(&y, 1, StopRule::new(50, 0.0).unwrap(), SeedSpec::new(3)).unwrap();
        let f = fit(&y, &cp_reconstruct(&out.model).unwrap()).unwrap();
        assert!(f > 1.0 - 1e-8, "fit {f}");
    }

    #[test]
    fn hals_without_projection_can_go_negative() {
        let truth = CpModel::new(vec![
            Matrix::from_col_major(3, 1, vec![1., -2., 3.]).unwrap(),
            Matrix::from_col_major(3, 1, vec![1., 1., -1.]).unwrap(),
        ])
        .unwrap();
        let y = cp_reconstruct(&truth).unwrap();
        let out = cp_decompose(
            &y,
            1,
            UpdateRule::Hals { project: false },
            StopRule::new(200, 0.0).unwrap(),
            SeedSpec::new(5),
            None,
        )
        .unwrap();
        assert!(fit(&y, &cp_reconstruct(&out.model).unwrap()).unwrap() > 1.0 - 1e-8);
    }
}
