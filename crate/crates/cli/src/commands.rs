use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use tet_core::eval::NeighborMode;
use tet_core::kg::synthetic::{toy_kg, ToyKgConfig};
use tet_core::nn::GradCheckConfig;
use tet_core::train::{check_model_gradients, prepare_graph, LogRecord, ModelCheckOptions};
use tet_core::{
    evaluate, load_checkpoint, load_dataset, save_checkpoint, train as run_training, EvalOptions, KnowledgeGraph,
    LoadOptions, TrainConfig,
};

use crate::args::{EvalArgs, GradcheckArgs, StatsArgs, TrainArgs};
use crate::error::CliError;

fn load(dir: &Path) -> Result<KnowledgeGraph, CliError> {
    Ok(load_dataset(dir, &LoadOptions::default())?)
}

/// Writes pretty JSON to `path`, or to standard output.
fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("reports serialise");
    match path {
        Some(p) => fs::write(p, text + "\n").map_err(CliError::io(p)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn stats(args: &StatsArgs) -> Result<(), CliError> {
    let kg = load(&args.data.data)?;
    let s = kg.stats();
    emit_json(&s, args.output.as_deref())?;
    if args.output.is_some() {
        println!(
            "{} entities, {} relations, {} types in {} classes; {} triples, {}/{}/{} train/valid/test assertions",
            s.entities, s.relations, s.types, s.clusters, s.train_triples, s.train_tuples, s.valid, s.test
        );
    }
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = args.overrides.resolve(TrainConfig::default())?;
    let kg = load(&args.data.data)?;
    let out = &args.output;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let config_path = out.join("config.toml");
    let resolved = toml::to_string(&cfg).expect("config serialises");
    fs::write(&config_path, resolved).map_err(CliError::io(&config_path))?;

    let log_path = out.join("metrics.ndjson");
    let mut log = BufWriter::new(File::create(&log_path).map_err(CliError::io(&log_path))?);
    let mut write_error = None;
    let mut sink = |r: &LogRecord| {
        if let LogRecord::Validation { epoch, mrr, hit1, hit3, hit10, .. } = r {
            println!("epoch {epoch}: valid MRR={mrr:.4} Hit@1={hit1:.4} Hit@3={hit3:.4} Hit@10={hit10:.4}");
        }
        let line = serde_json::to_string(r).expect("log records serialise");
        if let Err(e) = writeln!(log, "{line}") {
            write_error.get_or_insert(e);
        }
    };
    let result = run_training(&kg, &cfg, &mut sink);
    drop(sink);
    log.flush().map_err(CliError::io(&log_path))?;
    if let Some(e) = write_error {
        return Err(CliError::Io { path: log_path, source: e });
    }
    let outcome = result?;
    save_checkpoint(&outcome.best, &out.join("best.tetc"))?;
    save_checkpoint(&outcome.last, &out.join("last.tetc"))?;
    match (outcome.best.best_mrr, outcome.best.best_epoch) {
        (Some(m), Some(e)) => println!("best valid MRR {m:.4} after epoch {e}; wrote {}", out.display()),
        _ => println!("trained {} epochs; wrote {}", cfg.epochs, out.display()),
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let kg = load(&args.data.data)?;
    let ck = load_checkpoint(&args.checkpoint, &kg)?;
    let model = ck.restore(&kg)?;
    let graph = prepare_graph(&kg, &ck.config)?;
    let opts = EvalOptions {
        split: args.split,
        tie_policy: args.tie_policy.unwrap_or(ck.config.tie_policy),
        neighbors: NeighborMode::All,
        threads: args.threads.unwrap_or(ck.config.threads).max(1),
    };
    let out = evaluate(&model, &ck.params, &graph, &opts);
    if let Some(path) = &args.per_query {
        let v = kg.vocab();
        let mut csv = String::from("entity,type,rank\n");
        for q in &out.queries {
            csv.push_str(&format!(
                "{},{},{}\n",
                v.entities.label(q.entity.index()),
                v.types.label(q.ty.index()),
                q.rank
            ));
        }
        fs::write(path, csv).map_err(CliError::io(path))?;
    }
    emit_json(&out.report, args.output.as_deref())?;
    if args.output.is_some() {
        println!("{}: {}", args.split, out.report);
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let base = TrainConfig {
        dim: 16,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 32,
        ..TrainConfig::default()
    };
    let cfg = args.overrides.resolve(base)?;
    let kg = match &args.data {
        Some(dir) => load(dir)?,
        None => toy_kg(&ToyKgConfig::default()),
    };
    let kg = prepare_graph(&kg, &TrainConfig { drop_rate: 0.0, ..cfg.clone() })?;
    let entities = args.entities.map(|n| {
        let mut all = kg.entities_in(tet_core::Split::Train);
        all.truncate(n.max(1));
        all
    });
    let opts = ModelCheckOptions {
        entities,
        seed: cfg.seed,
        check: GradCheckConfig {
            coords_per_param: args.coords.max(1),
            seed: cfg.seed,
            ..GradCheckConfig::default()
        },
    };
    let report = check_model_gradients(&kg, &cfg.model_config(), &cfg.loss_config(), &opts)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let passed = report.max_rel_error < args.tolerance;
    let json = json!({
        "max_rel_error": report.max_rel_error,
        "max_abs_error_small": report.max_abs_error_small,
        "tolerance": args.tolerance,
        "passed": passed,
        "checked": report.checked,
        "checked_small": report.checked_small,
        "skipped_kinks": report.skipped_kinks,
        "worst": report.worst.as_ref().map(|w| json!({
            "param": w.param,
            "index": w.index,
            "analytic": w.analytic,
            "numeric": w.numeric,
        })),
    });
    emit_json(&json, args.output.as_deref())?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "max relative error {:.3e} exceeds tolerance {:.1e}",
            report.max_rel_error, args.tolerance
        )))
    }
}
