use bigtensor_core::cp::CpModel;
use bigtensor_core::io::{load_cp, load_tensor, load_tucker, save_cp, save_tensor, save_tucker};
use bigtensor_core::random::{gaussian_matrix, SeedSpec};
use bigtensor_core::{hosvd, DenseTensor};

#[test]
fn files_roundtrip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let y = DenseTensor::new(vec![5, 4, 3], gaussian_matrix(60, 1, SeedSpec::new(1)).into_data()).unwrap();
    let p = dir.path().join("y.dten");
    save_tensor(&p, &y).unwrap();
    assert_eq!(load_tensor(&p).unwrap(), y);

    let m = hosvd(&y, &[2, 3, 2]).unwrap();
    let p = dir.path().join("y.tkr");
    save_tucker(&p, &m).unwrap();
    assert_eq!(load_tucker(&p).unwrap(), m);

    let cp = CpModel::new(vec![
        gaussian_matrix(5, 2, SeedSpec::new(2)),
        gaussian_matrix(4, 2, SeedSpec::new(3)),
        gaussian_matrix(3, 2, SeedSpec::new(4)),
    ])
    .unwrap();
    let p = dir.path().join("y.cpm");
    save_cp(&p, &cp).unwrap();
    assert_eq!(load_cp(&p).unwrap(), cp);
}

#[test]
fn wrong_kind_and_truncation_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let y = DenseTensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
    let p = dir.path().join("y.dten");
    save_tensor(&p, &y).unwrap();
    assert!(load_tucker(&p).is_err());
    assert!(load_cp(&p).is_err());
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_tensor(&p).is_err());
    assert!(load_tensor(dir.path().join("missing.dten")).is_err());
}
