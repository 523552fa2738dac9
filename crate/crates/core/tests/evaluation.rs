use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tet_core::eval::NeighborMode;
use tet_core::kg::synthetic::{toy_kg, ToyKgConfig};
use tet_core::kg::Split;
use tet_core::model::TetModel;
use tet_core::nn::ParameterStore;
use tet_core::{evaluate, filtered_rank, hits_at_k, mrr, EvalOptions, MetricsReport, TiePolicy, TrainConfig};

/// Sorts the surviving candidates by descending score and scans for the
/// first entry tied with the gold score.
fn sort_oracle(scores: &[f64], gold: usize, filtered: &[bool], policy: TiePolicy) -> f64 {
    let mut kept: Vec<f64> = scores
        .iter()
        .enumerate()
        .filter(|&(k, _)| k == gold || !filtered[k])
        .map(|(_, &s)| s)
        .collect();
    kept.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let first = kept.iter().position(|&s| s == scores[gold]).unwrap();
    let tied = kept.iter().filter(|&&s| s == scores[gold]).count();
    match policy {
        TiePolicy::Optimistic => (first + 1) as f64,
        TiePolicy::Mean => (first + 1) as f64 + (tied - 1) as f64 / 2.0,
    }
}

fn random_query(rng: &mut impl Rng) -> (Vec<f64>, usize, Vec<bool>) {
    let l = rng.random_range(1..=50);
    // A coarse grid makes ties common.
    let coarse = rng.random_bool(0.5);
    let scores: Vec<f64> = (0..l)
        .map(|_| {
            if coarse {
                rng.random_range(0..5) as f64 * 0.25
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
        .collect();
    let gold = rng.random_range(0..l);
    let filtered = (0..l).map(|k| k != gold && rng.random_bool(0.3)).collect();
    (scores, gold, filtered)
}

#[test]
fn rank_matches_sort_oracle_on_random_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let (scores, gold, filtered) = random_query(&mut rng);
        for policy in [TiePolicy::Optimistic, TiePolicy::Mean] {
            assert_eq!(
                filtered_rank(&scores, gold, &filtered, policy),
                sort_oracle(&scores, gold, &filtered, policy)
            );
        }
    }
}

#[test]
fn hand_computed_metrics() {
    let ranks = [1.0, 2.0, 4.0];
    assert!((mrr(&ranks) - 0.58333).abs() < 1e-4);
    assert!((hits_at_k(&ranks, 3) - 0.6667).abs() < 1e-4);
    assert_eq!(mrr(&[1.0, 1.0]), 1.0);
    assert_eq!(mrr(&[10.0]), 0.1);
}

#[test]
fn constant_scorer_ties_resolve_by_policy() {
    let kg = toy_kg(&ToyKgConfig::default());
    let cfg = TrainConfig {
        dim: 8,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 8,
        ..TrainConfig::default()
    };
    let mut store = ParameterStore::<f32>::new();
    let model = TetModel::new(&kg, cfg.model_config(), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    store.get_mut(model.params().head_weight).data_mut().fill(0.0);
    let optimistic = evaluate(&model, &store, &kg, &EvalOptions::new(Split::Test)).report;
    assert_eq!(optimistic.mrr, 1.0);
    let opts = EvalOptions {
        tie_policy: TiePolicy::Mean,
        ..EvalOptions::new(Split::Test)
    };
    let out = evaluate(&model, &store, &kg, &opts);
    // Every competitor that survives filtering ties with the gold type.
    let l = kg.num_types();
    for q in &out.queries {
        let known = kg.positive_label_row(q.entity, &Split::ALL).iter().filter(|&&p| p).count();
        assert_eq!(q.rank, 1.0 + (l - known) as f64 / 2.0);
    }
}

#[test]
fn evaluation_is_pure_and_thread_count_invariant() {
    let kg = toy_kg(&ToyKgConfig::default());
    let cfg = TrainConfig {
        dim: 8,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 8,
        ..TrainConfig::default()
    };
    let mut store = ParameterStore::<f32>::new();
    let model = TetModel::new(&kg, cfg.model_config(), &mut store, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let serial = EvalOptions::new(Split::Valid);
    let parallel = EvalOptions {
        threads: 3,
        ..EvalOptions::new(Split::Valid)
    };
    let a = evaluate(&model, &store, &kg, &serial);
    let b = evaluate(&model, &store, &kg, &serial);
    let c = evaluate(&model, &store, &kg, &parallel);
    assert_eq!(a.queries, b.queries);
    assert_eq!(a.queries, c.queries);
    assert_eq!(a.report, c.report);

    let sampled = EvalOptions {
        neighbors: NeighborMode::Sampled {
            k_type: 1,
            k_rel: 1,
            seed: 9,
        },
        ..EvalOptions::new(Split::Valid)
    };
    let s1 = evaluate(&model, &store, &kg, &sampled);
    let s2 = evaluate(&model, &store, &kg, &sampled);
    assert_eq!(s1.queries, s2.queries);
}

proptest! {
    #[test]
    fn filtering_never_increases_rank(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, gold, filtered) = random_query(&mut rng);
        let none = vec![false; scores.len()];
        for policy in [TiePolicy::Optimistic, TiePolicy::Mean] {
            prop_assert!(filtered_rank(&scores, gold, &filtered, policy) <= filtered_rank(&scores, gold, &none, policy));
        }
    }

    #[test]
    fn rank_is_shift_invariant(seed in any::<u64>(), shift in -100i32..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, gold, filtered) = random_query(&mut rng);
        // Integer shifts of quarter-grid scores are exact in binary floating point.
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift as f64).collect();
        let coarse = scores.iter().all(|s| (s * 4.0).fract() == 0.0);
        prop_assume!(coarse);
        prop_assert_eq!(
            filtered_rank(&scores, gold, &filtered, TiePolicy::Optimistic),
            filtered_rank(&shifted, gold, &filtered, TiePolicy::Optimistic)
        );
    }

    #[test]
    fn rank_depends_on_order_only(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, gold, filtered) = random_query(&mut rng);
        let squashed: Vec<f64> = scores.iter().map(|s| s.tanh() * 3.0 + 1.0).collect();
        prop_assert_eq!(
            filtered_rank(&scores, gold, &filtered, TiePolicy::Mean),
            filtered_rank(&squashed, gold, &filtered, TiePolicy::Mean)
        );
    }

    #[test]
    fn hits_are_monotone_and_bounded(ranks in prop::collection::vec(1u32..60, 1..40)) {
        let ranks: Vec<f64> = ranks.into_iter().map(f64::from).collect();
        let mut prev = 0.0;
        for k in 1..=60 {
            let h = hits_at_k(&ranks, k);
            prop_assert!(h >= prev && h <= 1.0);
            prev = h;
        }
        let m = mrr(&ranks);
        prop_assert!(m > 0.0 && m <= 1.0);
        let r = MetricsReport::from_ranks(&ranks);
        prop_assert!(r.hit1 <= r.hit3 && r.hit3 <= r.hit10);
        prop_assert_eq!(r.hit1, ranks.iter().filter(|&&x| x == 1.0).count() as f64 / ranks.len() as f64);
    }
}
