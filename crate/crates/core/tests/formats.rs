use lingscrub_core::data::{
    load_labels, load_matrix, load_timeline, save_labels, save_matrix, save_timeline, FeatureMatrix,
    LabelTable, Matrix, ResponseMatrix, UnitKind, WordTimeline,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_fmat_round_trip(
        (rows, cols, vals) in (1usize..12, 1usize..9)
            .prop_flat_map(|(r, c)| (Just(r), Just(c), proptest::collection::vec(-1e6f32..1e6, r * c))),
        layer in 1u32..48,
        tr in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmat");
        let values = DMatrix::from_iterator(rows, cols, vals.iter().map(|&v| f64::from(v)));
        let kind = if tr { UnitKind::Tr } else { UnitKind::Word };
        let m = Matrix::from(FeatureMatrix::new(values, layer, kind).unwrap());
        save_matrix(&m, &path).unwrap();
        prop_assert_eq!(load_matrix(&path).unwrap(), m);
    }
}

#[test]
fn response_matrices_come_back_as_responses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub-01.fmat");
    let values = DMatrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64 * 0.5);
    let m = ResponseMatrix::new(values.clone(), "sub-01", 1.5).unwrap();
    save_matrix(&Matrix::from(m), &path).unwrap();
    let back = load_matrix(&path).unwrap();
    assert_eq!(back.values(), &values);
    assert!(back.clone().into_feature().is_err());
    assert_eq!(back.into_response().unwrap().trs(), 5);
}

#[test]
fn overflow_on_narrowing_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.fmat");
    let values = DMatrix::from_element(2, 2, 1e300);
    let m = FeatureMatrix::new(values, 1, UnitKind::Word).unwrap();
    assert!(save_matrix(&Matrix::from(m), &path).is_err());
}

#[test]
fn truncated_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fmat");
    let m = FeatureMatrix::new(DMatrix::from_element(4, 4, 1.0), 2, UnitKind::Word).unwrap();
    save_matrix(&Matrix::from(m), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_matrix(&path).is_err());
}

#[test]
fn timeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("timeline.tsv");
    let t = WordTimeline::new(vec![0.0, 0.25, 0.5, 1.125, 2.0], vec![0, 0, 0, 1, 1]).unwrap();
    save_timeline(&t, &path).unwrap();
    assert_eq!(load_timeline(&path).unwrap(), t);
}

#[test]
fn decreasing_onsets_are_rejected() {
    assert!(WordTimeline::new(vec![0.0, 0.5, 0.4], vec![0, 0, 0]).is_err());
}

#[test]
fn label_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.tsv");
    let t = LabelTable::new(
        vec!["tense".into(), "depth".into()],
        vec![vec![0, 1, 1, 0], vec![2, 0, 1, 2]],
    )
    .unwrap();
    save_labels(&t, &path).unwrap();
    let back = load_labels(&path).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.column_by_name("depth").unwrap(), &[2, 0, 1, 2]);
}
