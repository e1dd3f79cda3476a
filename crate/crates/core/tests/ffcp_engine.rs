use bigtensor_core::cp::{cp_reconstruct, gradient_terms, CpModel, StopRule, SweepRecord};
use bigtensor_core::ffcp::{ffcp_observed, ffcp_yb, soft_threshold};
use bigtensor_core::random::{gaussian_matrix, orthonormal_basis, SeedSpec};
use bigtensor_core::tensor::{fit, ttm};
use bigtensor_core::tucker::reconstruct;
use bigtensor_core::{ffcp, tucker_cp, Constraint, DenseTensor, Matrix, TuckerModel};
use std::time::Instant;

fn random_factors(dims: &[usize], rank: usize, seed: u64) -> Vec<Matrix> {
    dims.iter()
        .enumerate()
        .map(|(n, &d)| gaussian_matrix(d, rank, SeedSpec::with_stream(seed, n as u64)))
        .collect()
}

fn orthonormal_tucker(dims: &[usize], ranks: &[usize], seed: u64) -> TuckerModel {
    let core = DenseTensor::new(
        ranks.to_vec(),
        gaussian_matrix(ranks.iter().product(), 1, SeedSpec::with_stream(seed, 99)).into_data(),
    )
    .unwrap();
    let factors = dims
        .iter()
        .zip(ranks)
        .enumerate()
        .map(|(n, (&d, &r))| orthonormal_basis(&gaussian_matrix(d, r, SeedSpec::with_stream(seed, n as u64 + 10))))
        .collect();
    TuckerModel::new(core, factors).unwrap()
}

fn nonneg_cp(dims: &[usize], rank: usize, seed: u64) -> CpModel {
    CpModel::new(random_factors(dims, rank, seed).into_iter().map(|f| f.map(f64::abs)).collect()).unwrap()
}

fn zero_count(m: &CpModel) -> usize {
    m.factors.iter().flat_map(|f| f.data()).filter(|&&x| x == 0.0).count()
}

#[test]
fn soft_threshold_table() {
    let mut m = Matrix::from_col_major(1, 5, vec![3.0, 0.5, -2.0, 1.0, -1.0]).unwrap();
    soft_threshold(&mut m, 1.0);
    assert_eq!(m.data(), &[2.0, 0.0, -1.0, 0.0, 0.0]);
    let g = gaussian_matrix(4, 3, SeedSpec::new(1));
    let mut same = g.clone();
    soft_threshold(&mut same, 0.0);
    assert_eq!(same, g);
    let mut small = g.map(|x| x.clamp(-0.5, 0.5));
    soft_threshold(&mut small, 0.5);
    assert!(small.data().iter().all(|&x| x == 0.0));
}

#[test]
fn constraint_parsing() {
    assert_eq!(Constraint::parse("nonneg_hals", 0.0).unwrap(), Constraint::NonnegHals);
    assert_eq!(Constraint::parse("sparse", 0.3).unwrap(), Constraint::Sparse { c: 0.3 });
    assert!(Constraint::parse("sparse", -1.0).is_err());
    assert!(Constraint::parse("lasso", 0.0).is_err());
}

#[test]
fn compressed_gradient_matches_dense_oracle() {
    let t = orthonormal_tucker(&[20, 20, 20], &[6, 5, 4], 1);
    let dense = reconstruct(&t).unwrap();
    let factors = random_factors(&[20, 20, 20], 3, 2);
    for n in 0..3 {
        let (yb, _) = gradient_terms(&dense, &factors, n).unwrap();
        let fast = ffcp_yb(&t, &factors, n).unwrap();
        assert!(fast.max_abs_diff(&yb) < 1e-10 * yb.frobenius_norm().max(1.0));
    }
    assert!(ffcp_yb(&t, &factors[..2], 0).is_err());
    assert!(ffcp_yb(&t, &factors, 3).is_err());
}

#[test]
fn identity_factors_reduce_to_core_gradient() {
    let core = DenseTensor::new(vec![3, 4, 2], gaussian_matrix(24, 1, SeedSpec::new(3)).into_data()).unwrap();
    let t = TuckerModel::new(core.clone(), vec![Matrix::identity(3), Matrix::identity(4), Matrix::identity(2)]).unwrap();
    let factors = random_factors(&[3, 4, 2], 2, 4);
    for n in 0..3 {
        let (yb, _) = gradient_terms(&core, &factors, n).unwrap();
        assert!(ffcp_yb(&t, &factors, n).unwrap().max_abs_diff(&yb) < 1e-12);
    }
}

#[test]
fn rank_one_matches_ttm_chain() {
    let t = orthonormal_tucker(&[7, 6, 5], &[3, 3, 2], 5);
    let factors = random_factors(&[7, 6, 5], 1, 6);
    for n in 0..3 {
        let mut h = t.core.clone();
        for p in (0..3).filter(|&p| p != n) {
            let v = t.factors[p].t_matmul(&factors[p]).unwrap();
            h = ttm(&h, &v.transpose(), p).unwrap();
        }
        let h = Matrix::from_col_major(t.core.shape()[n], 1, h.into_data()).unwrap();
        let expected = t.factors[n].matmul(&h).unwrap();
        assert!(ffcp_yb(&t, &factors, n).unwrap().max_abs_diff(&expected) < 1e-12);
    }
}

#[test]
fn exact_tucker_form_of_cp_tensor_is_recovered() {
    let truth = CpModel::new(random_factors(&[50, 50, 50, 50], 10, 7)).unwrap();
    let t = TuckerModel::from_cp(&truth).unwrap();
    assert_eq!(t.ranks(), vec![10; 4]);
    let out = ffcp(&t, 10, Constraint::None, StopRule::new(1000, 1e-14).unwrap(), SeedSpec::new(8)).unwrap();
    let y = cp_reconstruct(&truth).unwrap();
    let f = fit(&y, &cp_reconstruct(&out.model).unwrap()).unwrap();
    assert!(f > 1.0 - 1e-6, "fit {f} after {} sweeps", out.iterations());
}

#[test]
fn compressed_fit_equals_dense_fit() {
    let t = orthonormal_tucker(&[12, 11, 10], &[4, 4, 4], 9);
    let dense = reconstruct(&t).unwrap();
    for constraint in [Constraint::None, Constraint::NonnegHals, Constraint::Sparse { c: 0.01 }] {
        let mut checks = 0;
        let mut obs = |rec: &SweepRecord, f: &[Matrix]| {
            let yh = cp_reconstruct(&CpModel::new(f.to_vec()).unwrap()).unwrap();
            let d = fit(&dense, &yh).unwrap();
            assert!((d - rec.fit).abs() < 1e-8, "{} vs {}", d, rec.fit);
            checks += 1;
        };
        ffcp_observed(&t, 3, constraint, StopRule::new(15, 0.0).unwrap(), SeedSpec::new(10), Some(&mut obs)).unwrap();
        assert_eq!(checks, 15);
    }
}

#[test]
fn nonnegative_variants_stay_nonnegative() {
    let truth = nonneg_cp(&[15, 14, 13], 3, 11);
    let t = TuckerModel::from_cp(&truth).unwrap();
    for constraint in [Constraint::NonnegMu, Constraint::NonnegHals] {
        let mut mins = Vec::new();
        let mut obs = |_: &SweepRecord, f: &[Matrix]| {
            mins.push(f.iter().map(Matrix::min_entry).fold(f64::INFINITY, f64::min));
        };
        let out = ffcp_observed(&t, 3, constraint, StopRule::new(30, 0.0).unwrap(), SeedSpec::new(12), Some(&mut obs)).unwrap();
        assert_eq!(mins.len(), 30);
        assert!(mins.iter().all(|&m| m >= 0.0), "{constraint:?}: {mins:?}");
        assert!(out.model.factors.iter().all(|f| f.min_entry() >= 0.0));
    }
}

#[test]
fn factors_stay_in_the_tucker_column_space() {
    let t = orthonormal_tucker(&[20, 18, 16], &[5, 5, 5], 13);
    let out = ffcp(&t, 3, Constraint::None, StopRule::new(500, 1e-12).unwrap(), SeedSpec::new(14)).unwrap();
    for (a, u) in out.model.factors.iter().zip(&t.factors) {
        let inside = u.matmul(&u.t_matmul(a).unwrap()).unwrap();
        assert!(a.sub(&inside).unwrap().frobenius_norm() / a.frobenius_norm() < 1e-6);
    }
}

#[test]
fn zero_count_monotone_in_threshold() {
    let t = orthonormal_tucker(&[15, 15, 15], &[4, 4, 4], 15);
    let mut last = 0;
    for c in [0.0, 0.01, 0.05, 0.1, 0.2, 0.5] {
        let constraint = Constraint::parse("sparse", c).unwrap();
        let out = ffcp(&t, 3, constraint, StopRule::new(50, 0.0).unwrap(), SeedSpec::new(16)).unwrap();
        let zeros = zero_count(&out.model);
        assert!(zeros >= last, "c={c}: {zeros} < {last}");
        last = zeros;
    }
    assert!(last > 0);
}

#[test]
fn tucker_cp_baseline() {
    let truth = CpModel::new(random_factors(&[20, 20, 20], 4, 17)).unwrap();
    let t = TuckerModel::from_cp(&truth).unwrap();
    let out = tucker_cp(&t, 4, StopRule::new(1000, 1e-14).unwrap(), SeedSpec::new(18)).unwrap();
    let y = cp_reconstruct(&truth).unwrap();
    assert!(fit(&y, &cp_reconstruct(&out.model).unwrap()).unwrap() > 1.0 - 1e-6);

    // more components than the core has rows along each mode
    let small = orthonormal_tucker(&[10, 9, 8], &[2, 3, 2], 19);
    let out = tucker_cp(&small, 5, StopRule::new(20, 0.0).unwrap(), SeedSpec::new(20)).unwrap();
    assert_eq!(out.model.rank(), 5);
    assert_eq!(out.model.dims(), vec![10, 9, 8]);
}

fn median_sweep_seconds(dim: usize) -> f64 {
    let t = orthonormal_tucker(&[dim; 3], &[10; 3], 21);
    let mut times = Vec::new();
    let mut obs = |rec: &SweepRecord, _: &[Matrix]| times.push(rec.mode_seconds.iter().sum::<f64>());
    ffcp_observed(&t, 10, Constraint::None, StopRule::new(40, 0.0).unwrap(), SeedSpec::new(22), Some(&mut obs)).unwrap();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

#[test]
fn sweep_cost_roughly_linear_in_dimension() {
    let start = Instant::now();
    median_sweep_seconds(200);
    let t200 = median_sweep_seconds(200);
    let t400 = median_sweep_seconds(400);
    assert!(t400 <= 3.0 * t200, "{t400} vs {t200}");
    assert!(start.elapsed().as_secs() < 60);
}
