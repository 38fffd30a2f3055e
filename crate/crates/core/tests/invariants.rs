use lingscrub_core::data::{FeatureMatrix, UnitKind};
use lingscrub_core::probing::stratified_split;
use lingscrub_core::removal::{remove_multiple, LabelEncoding, RemovalOptions};
use lingscrub_core::stats::bh_fdr;
use lingscrub_core::synth::{generate_dataset, SynthConfig};
use lingscrub_core::temporal::{fir_expand_matrix, zscore_columns};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn arb_features(n: usize, d: usize) -> impl Strategy<Value = FeatureMatrix> {
    proptest::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| {
        FeatureMatrix::new(DMatrix::from_column_slice(n, d, &v), 1, UnitKind::Word).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    // the normal equations: Tᵀr = λθ, and residual columns sum to zero with an intercept
    #[test]
    fn ridge_residuals_satisfy_normal_equations(
        (w, y1, y2) in (8usize..40, 1usize..6).prop_flat_map(|(n, d)| (
            arb_features(n, d),
            proptest::collection::vec(0usize..3, n),
            proptest::collection::vec(0usize..2, n),
        )),
        lambda in prop_oneof![Just(0.0), 1e-3f64..1e3],
        one_hot in any::<bool>(),
    ) {
        let encoding = if one_hot { LabelEncoding::OneHot } else { LabelEncoding::Scalar };
        let opts = RemovalOptions { lambda, encoding, intercept: true };
        let cols: [&[usize]; 2] = [&y1, &y2];
        let Ok(fit) = remove_multiple(&w, &cols, &opts) else { return Ok(()) };
        let scale = w.values().amax().max(1.0) * w.rows() as f64;
        prop_assert!(fit.identity_residual(&cols).unwrap() <= 1e-9 * scale);
        for c in fit.residuals.values().column_iter() {
            prop_assert!(c.sum().abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn stratified_split_partitions_every_class(
        labels in proptest::collection::vec(0usize..4, 1..200),
        frac in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let (train, test) = stratified_split(&labels, frac, seed);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for k in 0..4 {
            let total = labels.iter().filter(|&&y| y == k).count();
            let held = test.iter().filter(|&&i| labels[i] == k).count();
            prop_assert!((held as f64 - total as f64 * frac).abs() <= 0.5 + 1e-9);
        }
        prop_assert_eq!(stratified_split(&labels, frac, seed), (train, test));
    }

    #[test]
    fn bh_rejections_grow_with_q(p in proptest::collection::vec(0.0f64..1.0, 1..50), q in 0.001f64..0.3) {
        let low = bh_fdr(&p, q);
        let high = bh_fdr(&p, q * 2.0);
        prop_assert!(low.iter().zip(&high).all(|(l, h)| !l || *h));
    }

    #[test]
    fn fir_blocks_are_shifted_copies(
        (n, d, v) in (10usize..30, 1usize..4).prop_flat_map(|(n, d)| (Just(n), Just(d), proptest::collection::vec(-3.0f64..3.0, n * d))),
    ) {
        let x = DMatrix::from_column_slice(n, d, &v);
        let delays: Vec<usize> = (1..=8).collect();
        let out = fir_expand_matrix(&x, &delays).unwrap();
        prop_assert_eq!(out.shape(), (n, d * 8));
        for (j, &k) in delays.iter().enumerate() {
            for c in 0..d {
                for t in 0..n {
                    let want = if t >= k { x[(t - k, c)] } else { 0.0 };
                    prop_assert_eq!(out[(t, j * d + c)], want);
                }
            }
        }
    }

    #[test]
    fn zscore_is_scale_and_shift_invariant(
        (n, v) in (5usize..40).prop_flat_map(|n| (Just(n), proptest::collection::vec(-3.0f64..3.0, n * 2))),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let x = DMatrix::from_column_slice(n, 2, &v);
        let z = zscore_columns(&x).unwrap();
        prop_assume!(z.constant_columns.is_empty());
        let moved = zscore_columns(&x.map(|e| a * e + b)).unwrap();
        prop_assert!((z.values - moved.values).amax() < 1e-8);
    }
}

fn tiny_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n_words: 300,
        dims: 8,
        n_layers: 3,
        n_subjects: 2,
        trs: 80,
        voxels: 12,
        ..SynthConfig::desk(seed)
    }
    .with_uniform_strength(2.0)
}

#[test]
fn synthetic_datasets_are_reproducible_from_the_seed() {
    let a = generate_dataset(&tiny_synth(11)).unwrap();
    let b = generate_dataset(&tiny_synth(11)).unwrap();
    let c = generate_dataset(&tiny_synth(12)).unwrap();
    assert_eq!(a.features, b.features);
    assert_eq!(a.responses, b.responses);
    assert_eq!(a.labels, b.labels);
    assert_ne!(a.features, c.features);
}

#[test]
fn synthetic_dataset_shapes_follow_the_config() {
    let cfg = tiny_synth(4);
    let ds = generate_dataset(&cfg).unwrap();
    assert_eq!(ds.features.len(), 3);
    assert!(ds.features.iter().all(|f| f.rows() == 300 && f.cols() == 8));
    assert_eq!(ds.labels.tasks(), cfg.n_tasks);
    assert_eq!(ds.timeline.len(), 300);
    assert!(ds.responses.iter().all(|r| r.trs() == 80 && r.voxels() == 12));
    let dirs = &ds.directions;
    let gram = dirs.transpose() * dirs;
    assert!((gram - DMatrix::identity(cfg.n_tasks, cfg.n_tasks)).amax() < 1e-10);
}

#[test]
fn out_of_range_fractions_are_rejected() {
    let mut cfg = tiny_synth(1);
    cfg.brain_coupling = 1.2;
    assert!(generate_dataset(&cfg).is_err());
    let mut cfg = tiny_synth(1);
    cfg.brain_noise_rank = 0;
    assert!(generate_dataset(&cfg).is_err());
}
