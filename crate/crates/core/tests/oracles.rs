use lingscrub_core::data::{FeatureMatrix, UnitKind};
use lingscrub_core::encoding::pearson;
use lingscrub_core::removal::{remove_property, RemovalOptions};
use lingscrub_core::stats::bh_fdr;
use lingscrub_core::synth::{naive_bh_oracle, naive_pearson_oracle, ols_residual_oracle};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn features(rows: usize, cols: usize, vals: &[f64]) -> FeatureMatrix {
    FeatureMatrix::new(DMatrix::from_column_slice(rows, cols, vals), 1, UnitKind::Word).unwrap()
}

fn arb_problem() -> impl Strategy<Value = (FeatureMatrix, Vec<usize>)> {
    (6usize..30, 1usize..6, 2usize..5).prop_flat_map(|(n, d, k)| {
        (
            proptest::collection::vec(-10.0f64..10.0, n * d),
            proptest::collection::vec(0..k, n),
        )
            .prop_filter("labels need two distinct classes", |(_, y)| {
                y.iter().any(|&c| c != y[0])
            })
            .prop_map(move |(vals, y)| (features(n, d, &vals), y))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn unpenalized_residuals_match_least_squares((w, y) in arb_problem(), intercept in any::<bool>()) {
        let opts = RemovalOptions { intercept, ..Default::default() };
        let ours = remove_property(&w, &y, &opts).unwrap().residuals;
        let oracle = ols_residual_oracle(&w, &y, intercept).unwrap();
        let scale = w.values().amax().max(1.0);
        let gap = (ours.values() - oracle.values()).amax();
        prop_assert!(gap <= 1e-8 * scale, "gap {gap}");
    }

    #[test]
    fn pearson_matches_two_pass(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..60)) {
        let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        match (pearson(&y, &yhat).unwrap(), naive_pearson_oracle(&y, &yhat)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
            (None, None) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn bh_matches_definition(p in proptest::collection::vec(0.0f64..1.0, 1..80), q in 0.001f64..0.5) {
        prop_assert_eq!(bh_fdr(&p, q), naive_bh_oracle(&p, q));
    }

    #[test]
    fn bh_with_ties_matches_definition(
        p in proptest::collection::vec(prop_oneof![Just(0.001), Just(0.01), Just(0.04), Just(0.5)], 1..30),
        q in 0.01f64..0.2,
    ) {
        prop_assert_eq!(bh_fdr(&p, q), naive_bh_oracle(&p, q));
    }
}
