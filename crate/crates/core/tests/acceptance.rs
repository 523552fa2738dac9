//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! standard output (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tet_core::kg::synthetic::{toy_kg, ToyKgConfig};
use tet_core::kg::{load_dataset, LoadOptions};
use tet_core::model::{EntityInput, ModelConfig, ModuleFlags, Source};
use tet_core::nn::{grad_check, lr_at_epoch, Evaluation, GradCheckConfig, Init, ParamId, Reduce, Var};
use tet_core::scoring::{entity_loss, exp_weighted_pool, pool_weights, sfna_weight, LossConfig, ScoreSet};
use tet_core::train::{check_model_gradients, LogRecord, ModelCheckOptions, Trainer};
use tet_core::{
    evaluate, filtered_rank, hits_at_k, mrr, train, EvalOptions, Graph, LossKind, ParameterStore, Split, TetModel,
    TiePolicy, TrainConfig,
};

fn report(name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {status} | {name} | {detail}");
    assert!(pass, "{name}: {detail}");
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy")
}

/// Largest relative error of `build` under a random linear read-out.
fn primitive_error(shapes: &[Vec<usize>], training: bool, build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParameterStore::<f64>::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.register(format!("x{i}"), s.clone(), Init::Normal(1.0), &mut rng))
        .collect();
    let mut readout: Option<Vec<f64>> = None;
    let objective = |s: &ParameterStore<f64>| {
        let mut g = if training { Graph::training(s, 5) } else { Graph::new(s) }.with_kink_tracking();
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = build(&mut g, &vars);
        let n = g.value(out).len();
        let w = readout
            .get_or_insert_with(|| {
                let mut r = ChaCha8Rng::seed_from_u64(77);
                (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
            })
            .clone();
        let proj = g.mul_const(out, w);
        let loss = g.sum(proj);
        Evaluation {
            loss: g.value(loss).data()[0],
            grads: Some(g.backward(loss)),
            kink_signature: g.kink_signature(),
        }
    };
    let cfg = GradCheckConfig {
        coords_per_param: 24,
        ..GradCheckConfig::default()
    };
    let r = grad_check(&store, objective, &cfg).expect("finite objective");
    assert!(r.checked > 0);
    r.max_rel_error.max(if r.max_abs_error_small < 1e-8 { 0.0 } else { f64::INFINITY })
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

fn primitives() -> Vec<(&'static str, Vec<Vec<usize>>, bool, Build)> {
    let m = |r: usize, c: usize| vec![r, c];
    let mask = [true, true, true, false, true, true, false, false];
    vec![
        ("add", vec![m(3, 4), m(3, 4)], false, Box::new(|g, v| g.add(v[0], v[1]))),
        ("mul", vec![m(3, 4), m(3, 4)], false, Box::new(|g, v| g.mul(v[0], v[1]))),
        ("add_row", vec![m(3, 4), vec![4]], false, Box::new(|g, v| g.add_row(v[0], v[1]))),
        ("affine", vec![m(2, 3)], false, Box::new(|g, v| g.affine(v[0], -1.5, 0.25))),
        ("scale", vec![m(2, 3)], false, Box::new(|g, v| g.scale(v[0], 0.3))),
        ("matmul", vec![m(3, 4), m(4, 5)], false, Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("matmul_t", vec![m(3, 4), m(5, 4)], false, Box::new(|g, v| g.matmul_t(v[0], v[1]))),
        ("relu", vec![m(3, 4)], false, Box::new(|g, v| g.relu(v[0]))),
        ("gelu", vec![m(3, 4)], false, Box::new(|g, v| g.gelu(v[0]))),
        ("sigmoid", vec![m(3, 4)], false, Box::new(|g, v| g.sigmoid(v[0]))),
        (
            "ln",
            vec![m(3, 4)],
            false,
            Box::new(|g, v| {
                let s = g.sigmoid(v[0]);
                g.ln(s)
            }),
        ),
        ("clamp", vec![m(3, 4)], false, Box::new(|g, v| g.clamp(v[0], -0.5, 0.5))),
        ("softmax", vec![m(3, 5)], false, Box::new(|g, v| g.softmax(v[0]))),
        (
            "layer_norm",
            vec![m(3, 5), vec![5], vec![5]],
            false,
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        ),
        ("dropout", vec![m(4, 6)], true, Box::new(|g, v| g.dropout(v[0], 0.3))),
        ("select_rows", vec![m(4, 3)], false, Box::new(|g, v| g.select_rows(v[0], &[2, 0, 2, 3]))),
        ("concat_rows", vec![m(2, 3), m(1, 3)], false, Box::new(|g, v| g.concat_rows(&[v[1], v[0], v[1]]))),
        ("sum", vec![m(3, 4)], false, Box::new(|g, v| g.sum(v[0]))),
        ("mean", vec![m(3, 4)], false, Box::new(|g, v| g.mean(v[0]))),
        (
            "segment_mean",
            vec![m(5, 3)],
            false,
            Box::new(|g, v| g.segment_reduce(v[0], vec![vec![0, 1, 2], vec![3], vec![4, 1]], Reduce::Mean)),
        ),
        (
            "segment_max",
            vec![m(5, 3)],
            false,
            Box::new(|g, v| g.segment_reduce(v[0], vec![vec![0, 1, 2], vec![3], vec![4, 1]], Reduce::Max)),
        ),
        (
            "segment_min",
            vec![m(5, 3)],
            false,
            Box::new(|g, v| g.segment_reduce(v[0], vec![vec![0, 1, 2], vec![3], vec![4, 1]], Reduce::Min)),
        ),
        (
            "segment_pool",
            vec![m(6, 4)],
            false,
            Box::new(|g, v| g.segment_pool(v[0], vec![0..3, 3..4, 4..6], 0.5)),
        ),
        (
            "attention",
            vec![m(8, 6), m(8, 6), m(8, 6)],
            false,
            Box::new(move |g, v| g.attention(v[0], v[1], v[2], 4, 2, &mask)),
        ),
    ]
}

#[test]
fn gradient_fidelity() {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    for (name, shapes, training, build) in primitives() {
        let e = primitive_error(&shapes, training, build.as_ref());
        if e > worst.0 || worst.1.is_empty() {
            worst = (e, name);
        }
    }
    let kg = toy_kg(&ToyKgConfig::default());
    let cfg = ModelConfig {
        dim: 16,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 32,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let opts = ModelCheckOptions {
        check: GradCheckConfig {
            coords_per_param: 4,
            ..GradCheckConfig::default()
        },
        ..ModelCheckOptions::default()
    };
    let full = check_model_gradients(&kg, &cfg, &LossConfig::new(LossKind::Sfna), &opts).unwrap();
    let full_err = full
        .max_rel_error
        .max(if full.max_abs_error_small < 1e-8 { 0.0 } else { f64::INFINITY });
    let elapsed = start.elapsed();
    report(
        "gradient fidelity",
        worst.0 < 1e-5 && full_err < 1e-5 && elapsed < Duration::from_secs(60),
        &format!(
            "primitives max rel err {:.2e} ({}); full model d=16 max rel err {:.2e} over {} coords; {:.1}s",
            worst.0,
            worst.1,
            full_err,
            full.checked + full.checked_small,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn sfna_analytic_suite() {
    let f = |x: f64| sfna_weight(x).unwrap();
    let endpoints = f(0.0) == 0.0 && f(1.0) == 0.0;
    let below: f64 = 3.0 * 0.5 - 2.0 * 0.25;
    let above: f64 = 0.5 - 2.0 * 0.25 + 1.0;
    let continuity = (below - above).abs() <= 1e-12 && (f(0.5) - below).abs() <= 1e-12;
    let mut symmetry = 0.0f64;
    let mut max = (f64::NEG_INFINITY, 0.0);
    for i in 0..=1000 {
        let x = i as f64 / 1000.0;
        symmetry = symmetry.max((f(x) - f(1.0 - x)).abs());
        if f(x) > max.0 {
            max = (f(x), x);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    let sfna = LossConfig::new(LossKind::Sfna);
    let bce = LossConfig::new(LossKind::Bce);
    for _ in 0..10_000 {
        let p = [rng.random_range(0.0..=1.0)];
        let y = [rng.random_bool(0.5)];
        if entity_loss(&p, &y, &sfna) > entity_loss(&p, &y, &bce) {
            violations += 1;
        }
    }
    let pass = endpoints && continuity && symmetry <= 1e-12 && max == (1.0, 0.5) && violations == 0;
    report(
        "SFNA analytic suite",
        pass,
        &format!(
            "f(0)=f(1)=0: {endpoints}; continuity at 0.5: {continuity}; max asymmetry {symmetry:.1e} on 1001 points; \
             max {} at x={}; SFNA > BCE on {violations}/10000 pairs",
            max.0, max.1
        ),
    );
}

#[test]
fn pooling_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut weight_sum_err = 0.0f64;
    let mut identity_exact = true;
    let mut mean_err = 0.0f64;
    let mut max_err = 0.0f64;
    let mut order_exact = true;
    for _ in 0..500 {
        let n = rng.random_range(1..8);
        let l = rng.random_range(1..20);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..l).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        let set = ScoreSet::new(rows.clone());
        let w = pool_weights(&set, rng.random_range(0.0..5.0));
        for k in 0..l {
            weight_sum_err = weight_sum_err.max((w.iter().map(|r| r[k]).sum::<f64>() - 1.0).abs());
        }
        identity_exact &= exp_weighted_pool(&ScoreSet::new(vec![rows[0].clone()]), 0.5) == rows[0];
        let mean = exp_weighted_pool(&set, 0.0);
        for k in 0..l {
            let m = rows.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            mean_err = mean_err.max((mean[k] - m).abs());
        }
        // Separated inputs: each column is a shuffled ladder with unit gaps or more.
        let sep: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..l).map(|k| ((i * 7 + k * 3) % n) as f64 * 1.5 - 4.0).collect())
            .collect();
        let hard = exp_weighted_pool(&ScoreSet::new(sep.clone()), 1e3);
        for k in 0..l {
            let top = sep.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            max_err = max_err.max((hard[k] - top).abs());
        }
        let mut shuffled = rows.clone();
        shuffled.reverse();
        shuffled.rotate_left(n / 2);
        let a = exp_weighted_pool(&set, 0.7);
        let b = exp_weighted_pool(&ScoreSet::new(shuffled), 0.7);
        // Exact up to the summation order of the per-type weighted sum.
        order_exact &= a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 4.0 * f64::EPSILON * (1.0 + x.abs()));
    }
    let pass = weight_sum_err <= 1e-6 && identity_exact && mean_err <= 1e-7 && max_err <= 1e-3 && order_exact;
    report(
        "pooling suite",
        pass,
        &format!(
            "weight sum err {weight_sum_err:.1e}; single-source identity {identity_exact}; alpha=0 vs mean {mean_err:.1e}; \
             alpha=1e3 vs max {max_err:.1e}; order invariant {order_exact}"
        ),
    );
}

#[test]
fn ranking_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let l = rng.random_range(1..=50);
        let scores: Vec<f64> = (0..l).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
        let gold = rng.random_range(0..l);
        let filtered: Vec<bool> = (0..l).map(|k| k != gold && rng.random_bool(0.25)).collect();
        let mut order: Vec<usize> = (0..l).filter(|&k| k == gold || !filtered[k]).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then((a != gold).cmp(&(b != gold))));
        let oracle = order.iter().position(|&k| k == gold).unwrap() + 1;
        if filtered_rank(&scores, gold, &filtered, TiePolicy::Optimistic) != oracle as f64 {
            mismatches += 1;
        }
    }
    let ranks = [1.0, 2.0, 4.0];
    let m = mrr(&ranks);
    let h3 = hits_at_k(&ranks, 3);
    let pass = mismatches == 0 && (m - 0.58333).abs() <= 1e-4 && (h3 - 0.6667).abs() <= 1e-4;
    report(
        "ranking oracle",
        pass,
        &format!("{mismatches}/10000 mismatches vs sort oracle; MRR[1,2,4]={m:.5}; Hit@3={h3:.4}"),
    );
}

/// The configuration used for the overfit run on the toy graph.
fn overfit_config() -> TrainConfig {
    TrainConfig {
        dim: 32,
        ffn_dim: 128,
        num_layers: 2,
        epochs: 200,
        batch_size: 4,
        warmup: 100,
        dropout: 0.1,
        type_sample: 0,
        alpha: 1.0,
        loss: LossKind::Sfna,
        valid_every: 1000,
        deterministic: true,
        ..TrainConfig::default()
    }
}

#[test]
fn toy_overfit() {
    let kg = toy_kg(&ToyKgConfig::default());
    let cfg = overfit_config();
    let start = Instant::now();
    let mut trainer = Trainer::new(&kg, &cfg).unwrap();
    for _ in 0..cfg.epochs {
        trainer.run_epoch().unwrap();
    }
    let elapsed = start.elapsed();
    let eval = |split| evaluate(trainer.model(), trainer.store(), trainer.graph(), &EvalOptions::new(split));
    let train_mrr = eval(Split::Train).report.mrr;
    let held: Vec<f64> = [Split::Valid, Split::Test]
        .into_iter()
        .flat_map(|s| eval(s).queries)
        .map(|q| q.rank)
        .collect();
    let held_mrr = mrr(&held);
    report(
        "toy overfit",
        train_mrr >= 0.95 && held_mrr >= 0.90 && elapsed < Duration::from_secs(300),
        &format!(
            "train MRR {train_mrr:.4}; held-out MRR {held_mrr:.4} over {} queries; {:.1}s",
            held.len(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn ablation_grid_smoke() {
    let kg = toy_kg(&ToyKgConfig::default());
    let mut details = Vec::new();
    let mut pass = true;
    for flags in ModuleFlags::combinations() {
        let mut cfg = TrainConfig {
            dim: 16,
            ffn_dim: 32,
            num_layers: 1,
            num_heads: 2,
            epochs: 10,
            batch_size: 8,
            valid_every: 5,
            ..TrainConfig::default()
        };
        cfg.set_modules(flags);
        let finite = match train(&kg, &cfg, &mut |_| {}) {
            Ok(out) => out.log.iter().all(|r| match r {
                LogRecord::Epoch { loss, .. } => loss.is_finite(),
                LogRecord::Validation { mrr, .. } => mrr.is_finite(),
            }),
            Err(_) => false,
        };

        let mut store = ParameterStore::<f32>::new();
        let model = TetModel::new(&kg, cfg.model_config(), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let inputs: Vec<EntityInput> = (0..kg.num_entities() as u32)
            .map(|e| EntityInput::full(&kg, tet_core::EntityId(e)))
            .collect();
        let plan = model.plan(&kg, &inputs);
        let mut sources_ok = true;
        for (input, sources) in inputs.iter().zip(&plan.sources) {
            let locals = sources
                .iter()
                .filter(|s| matches!(s, Source::TypeclassLocal(_) | Source::RelationalLocal(_)))
                .count();
            let globals = sources.iter().filter(|s| matches!(s, Source::Global(_))).count();
            let contexts = sources.iter().filter(|s| matches!(s, Source::Context(_))).count();
            let neighbors = input.sample.typeclass.len() + input.sample.relational.len();
            sources_ok &= locals == if flags.local { neighbors } else { 0 };
            sources_ok &= globals == usize::from(flags.global);
            sources_ok &= contexts == usize::from(flags.context);
        }
        let names: Vec<&str> = store.iter().map(|(_, n, _)| n).collect();
        sources_ok &= flags.global || !names.iter().any(|n| n.starts_with("encoder.global"));
        sources_ok &= flags.context || !names.iter().any(|n| n.starts_with("encoder.context"));
        sources_ok &= (flags.local || flags.context) || !names.iter().any(|n| n.starts_with("encoder.local"));
        pass &= finite && sources_ok;
        details.push(format!("{flags}: finite={finite} sources={sources_ok}"));
    }
    report("ablation grid smoke", pass, &details.join("; "));
}

#[test]
fn dataset_fidelity() {
    let Some(dir) = std::env::var_os("TET_FB15KET_DIR") else {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(
            out,
            "acceptance SKIP | dataset fidelity | set TET_FB15KET_DIR to an FB15kET directory to run"
        );
        return;
    };
    let kg = load_dataset(&dir, &LoadOptions::default()).unwrap();
    let s = kg.stats();
    // Clusters are the classes the loader extracted from the type labels.
    let classes = s.clusters;
    report(
        "dataset fidelity",
        s.entities == 14_951 && s.relations == 1_345 && s.types == 3_584 && classes == 1_081,
        &format!(
            "{} entities, {} relations, {} types, {} classes",
            s.entities, s.relations, s.types, classes
        ),
    );
}

#[test]
fn determinism() {
    let kg = load_dataset(fixture(), &LoadOptions::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        deterministic: true,
        ..TrainConfig::default()
    };
    let run = || train(&kg, &cfg, &mut |_| {}).unwrap();
    let (a, b) = (run(), run());
    let trace = |log: &[LogRecord]| -> Vec<u64> {
        log.iter()
            .filter_map(|r| match r {
                LogRecord::Epoch { loss, .. } => Some(loss.to_bits()),
                _ => None,
            })
            .collect()
    };
    let same_trace = trace(&a.log) == trace(&b.log) && trace(&a.log).len() == 5;
    let same_ck = a.last.to_bytes() == b.last.to_bytes() && a.best.to_bytes() == b.best.to_bytes();
    report(
        "determinism",
        same_trace && same_ck,
        &format!("5-epoch loss traces identical: {same_trace}; checkpoints identical: {same_ck}"),
    );
}

#[test]
fn schedule() {
    let table = [
        (0, 1e-3),
        (49, 1e-3),
        (50, 2e-4),
        (149, 2e-4),
        (150, 4e-5),
        (349, 4e-5),
        (350, 8e-6),
        (499, 8e-6),
    ];
    let bad: Vec<String> = table
        .iter()
        .filter(|&&(e, want)| lr_at_epoch(1e-3, 50, e) != want)
        .map(|&(e, want)| format!("epoch {e}: {} != {want}", lr_at_epoch(1e-3, 50, e)))
        .collect();
    report(
        "schedule",
        bad.is_empty(),
        &if bad.is_empty() {
            "decay table matches exactly at epochs 0/50/150/350".to_string()
        } else {
            bad.join("; ")
        },
    );
}
