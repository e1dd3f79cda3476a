use bigtensor_bench::metrics::{cp_model_fit, match_factors, sir, SIR_CAP_DB};
use bigtensor_bench::synth::{add_noise, gen_cp_model, gen_cp_tensor, realized_snr, FactorDist};
use bigtensor_core::cp::{cp_reconstruct, CpModel};
use bigtensor_core::tensor::fit;
use bigtensor_core::{DenseTensor, Matrix, SeedSpec};
use proptest::prelude::*;

const EXP: FactorDist = FactorDist::Exponential { mean: 10.0, zero_fraction: 0.15 };

#[test]
fn generation_is_reproducible() {
    let (a, ta) = gen_cp_tensor(&[7, 6, 5], 3, FactorDist::Normal, SeedSpec::new(4)).unwrap();
    let (b, tb) = gen_cp_tensor(&[7, 6, 5], 3, FactorDist::Normal, SeedSpec::new(4)).unwrap();
    let (c, _) = gen_cp_tensor(&[7, 6, 5], 3, FactorDist::Normal, SeedSpec::new(5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_ne!(a, c);
    assert_eq!(a, cp_reconstruct(&ta).unwrap());
}

#[test]
fn exponential_factors_are_nonnegative_with_target_zeros() {
    let m = gen_cp_model(&[200, 150, 100], 10, EXP, SeedSpec::new(8)).unwrap();
    for f in &m.factors {
        assert!(f.data().iter().all(|&v| v >= 0.0));
        let zeros = f.data().iter().filter(|&&v| v == 0.0).count() as f64 / f.data().len() as f64;
        assert!((zeros - 0.15).abs() <= 0.02, "zero fraction {zeros}");
    }
    let mean = m.factors[0].data().iter().sum::<f64>() / 2000.0;
    // 85% of the entries are Exp(mean 10)
    assert!((mean - 8.5).abs() < 0.6, "mean {mean}");
}

#[test]
fn rank_one_is_an_outer_product() {
    let (y, t) = gen_cp_tensor(&[2, 2], 1, FactorDist::Normal, SeedSpec::new(3)).unwrap();
    let (a, b) = (t.factors[0].col(0), t.factors[1].col(0));
    for i in 0..2 {
        for j in 0..2 {
            assert_eq!(y.get(&[i, j]), a[i] * b[j]);
        }
    }
}

#[test]
fn zero_db_noise_matches_signal_norm() {
    let (y, _) = gen_cp_tensor(&[9, 8, 7], 2, FactorDist::Normal, SeedSpec::new(1)).unwrap();
    let noisy = add_noise(&y, 0.0, SeedSpec::new(2)).unwrap();
    let noise = noisy.sub(&y).unwrap().frobenius_norm();
    assert!((noise / y.frobenius_norm() - 1.0).abs() < 1e-9);
    assert_eq!(add_noise(&y, f64::INFINITY, SeedSpec::new(2)).unwrap(), y);
    assert!(add_noise(&DenseTensor::zeros(&[3, 3]).unwrap(), 5.0, SeedSpec::new(2)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn realized_snr_is_exact(snr in -20.0f64..40.0, seed in any::<u64>()) {
        let (y, _) = gen_cp_tensor(&[6, 5, 4], 2, FactorDist::Normal, SeedSpec::new(seed)).unwrap();
        let noisy = add_noise(&y, snr, SeedSpec::new(seed ^ 1)).unwrap();
        prop_assert!((realized_snr(&y, &noisy).unwrap() - snr).abs() < 1e-9);
    }

    #[test]
    fn sir_ignores_affine_rescaling(v in prop::collection::vec(-5.0f64..5.0, 8..40), s in 0.1f64..10.0, shift in -3.0f64..3.0) {
        prop_assume!(v.iter().any(|x| (x - v[0]).abs() > 1e-3));
        let w: Vec<f64> = v.iter().map(|x| -s * x + shift).collect();
        prop_assert_eq!(sir(&v, &v).unwrap(), SIR_CAP_DB);
        prop_assert!(sir(&v, &w).unwrap() > 200.0);
    }
}

#[test]
fn sir_formula_cases() {
    let a = [1.0, -2.0, 3.0, 0.5];
    assert_eq!(sir(&a, &a).unwrap(), SIR_CAP_DB);
    let neg: Vec<f64> = a.iter().map(|x| -x).collect();
    assert_eq!(sir(&a, &neg).unwrap(), SIR_CAP_DB);

    // a and b are orthogonal, zero mean and unit variance, so cos·a + sin·b
    // stays standardized and ‖a − â‖/‖a‖ = sqrt(2 − 2cos) = 0.1 at cos = 0.995
    let a = [1.0, -1.0, 1.0, -1.0];
    let b = [1.0, 1.0, -1.0, -1.0];
    let c: f64 = 0.995;
    let s = (1.0 - c * c).sqrt();
    let hat: Vec<f64> = a.iter().zip(&b).map(|(x, y)| c * x + s * y).collect();
    assert!((sir(&a, &hat).unwrap() - 20.0).abs() < 1e-9);

    assert!(sir(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).is_err());
    assert!(sir(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
}

fn map_columns(m: &CpModel, f: impl Fn(&Matrix) -> Matrix) -> CpModel {
    CpModel::new(m.factors.iter().map(f).collect()).unwrap()
}

#[test]
fn matching_recovers_permutation_and_scale() {
    let truth = gen_cp_model(&[30, 25, 20], 4, FactorDist::Normal, SeedSpec::new(6)).unwrap();
    let reversed = map_columns(&truth, |f| f.select_cols(&[3, 2, 1, 0]));
    let m = match_factors(&truth, &reversed).unwrap();
    assert_eq!(m.permutation, vec![3, 2, 1, 0]);
    assert_eq!(m.min_sir, SIR_CAP_DB);

    let scaled = map_columns(&truth, |f| Matrix::from_fn(f.rows(), f.cols(), |i, j| 2.0 * f.get(i, j)));
    let m = match_factors(&truth, &scaled).unwrap();
    assert_eq!(m.permutation, vec![0, 1, 2, 3]);
    assert!(m.min_sir > 250.0);

    let other = gen_cp_model(&[30, 25, 20], 3, FactorDist::Normal, SeedSpec::new(7)).unwrap();
    assert!(match_factors(&truth, &other).is_err());
}

#[test]
fn unrelated_factors_score_near_zero_db() {
    let truth = gen_cp_model(&[4000, 4000], 3, FactorDist::Normal, SeedSpec::new(10)).unwrap();
    let est = gen_cp_model(&[4000, 4000], 3, FactorDist::Normal, SeedSpec::new(11)).unwrap();
    let m = match_factors(&truth, &est).unwrap();
    // independent standardized vectors: ‖a − â‖² ≈ 2‖a‖², i.e. about −3 dB
    assert!(m.mean_sir.abs() < 4.0, "mean SIR {}", m.mean_sir);
}

#[test]
fn model_fit_matches_dense_fit() {
    let truth = gen_cp_model(&[9, 8, 7], 3, FactorDist::Normal, SeedSpec::new(20)).unwrap();
    let est = gen_cp_model(&[9, 8, 7], 5, FactorDist::Normal, SeedSpec::new(21)).unwrap();
    let dense = fit(&cp_reconstruct(&truth).unwrap(), &cp_reconstruct(&est).unwrap()).unwrap();
    assert!((cp_model_fit(&truth, &est).unwrap() - dense).abs() < 1e-10);
    assert!((cp_model_fit(&truth, &truth).unwrap() - 1.0).abs() < 1e-6);
}
