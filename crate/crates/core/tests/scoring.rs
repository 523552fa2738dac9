use proptest::prelude::*;

use tet_core::scoring::{
    entity_loss, exp_weighted_pool, pool_weights, sfna_weight, LossConfig, NegativeWeight, ScoreSet, SfnaWeight,
};
use tet_core::LossKind;

fn score_sets() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8, 1usize..12).prop_flat_map(|(n, l)| prop::collection::vec(prop::collection::vec(-20.0f64..20.0, l), n))
}

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..30).prop_flat_map(|l| (prop::collection::vec(0.0f64..=1.0, l), prop::collection::vec(any::<bool>(), l)))
}

proptest! {
    #[test]
    fn weights_form_a_distribution(sources in score_sets(), alpha in -5.0f64..5.0) {
        let set = ScoreSet::new(sources);
        let w = pool_weights(&set, alpha);
        for k in 0..set.num_types() {
            let total: f64 = w.iter().map(|row| row[k]).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|row| row[k] >= 0.0));
        }
    }

    #[test]
    fn pooled_score_lies_between_min_and_max(sources in score_sets(), alpha in 0.0f64..10.0) {
        let set = ScoreSet::new(sources.clone());
        let pooled = exp_weighted_pool(&set, alpha);
        for (k, p) in pooled.iter().enumerate() {
            let lo = sources.iter().map(|s| s[k]).fold(f64::INFINITY, f64::min);
            let hi = sources.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*p >= lo - 1e-9 && *p <= hi + 1e-9);
        }
    }

    #[test]
    fn pooling_ignores_source_order(sources in score_sets(), alpha in 0.0f64..4.0, rot in 0usize..8) {
        let mut rotated = sources.clone();
        let n = rotated.len();
        rotated.rotate_left(rot % n);
        rotated.reverse();
        let a = exp_weighted_pool(&ScoreSet::new(sources), alpha);
        let b = exp_weighted_pool(&ScoreSet::new(rotated), alpha);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn zero_temperature_is_the_mean(sources in score_sets()) {
        let n = sources.len() as f64;
        let pooled = exp_weighted_pool(&ScoreSet::new(sources.clone()), 0.0);
        for (k, p) in pooled.iter().enumerate() {
            let mean = sources.iter().map(|s| s[k]).sum::<f64>() / n;
            prop_assert!((p - mean).abs() < 1e-7);
        }
    }

    #[test]
    fn sfna_weight_is_symmetric_and_bounded(x in 0.0f64..=1.0) {
        let f = sfna_weight(x).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((f - sfna_weight(1.0 - x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn false_negative_aware_losses_never_exceed_bce((probs, labels) in pairs()) {
        let bce = entity_loss(&probs, &labels, &LossConfig::new(LossKind::Bce));
        for kind in [LossKind::Sfna, LossKind::Fna] {
            let l = entity_loss(&probs, &labels, &LossConfig::new(kind));
            prop_assert!(l <= bce + 1e-12, "{} {} > {}", kind, l, bce);
        }
    }

    #[test]
    fn positives_are_loss_kind_independent(probs in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let labels = vec![true; probs.len()];
        let bce = entity_loss(&probs, &labels, &LossConfig::new(LossKind::Bce));
        let sfna = entity_loss(&probs, &labels, &LossConfig::new(LossKind::Sfna));
        prop_assert_eq!(bce, sfna);
    }
}

#[test]
fn sfna_derivative_matches_finite_differences() {
    for i in 1..1000 {
        let x = i as f64 / 1000.0;
        if (x - 0.5).abs() < 1e-3 {
            continue;
        }
        let h = 1e-6;
        let fd = (SfnaWeight.weight(x + h) - SfnaWeight.weight(x - h)) / (2.0 * h);
        assert!((fd - SfnaWeight.derivative(x)).abs() < 1e-6, "x={x}");
    }
}

#[test]
fn single_source_pooling_is_exact() {
    let row = vec![0.25, -3.5, 7.0, 1e-9];
    for alpha in [0.0, 0.5, 3.0, 1e3] {
        assert_eq!(exp_weighted_pool(&ScoreSet::new(vec![row.clone()]), alpha), row);
    }
}
