use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, TrainConfig, VocabFingerprints};
use crate::error::{DataError, TrainError};
use crate::eval::{evaluate, EvalOptions, MetricsReport, NeighborMode};
use crate::kg::{drop_neighbors, sample_neighbors, EntityId, KnowledgeGraph, Split};
use crate::model::{EntityInput, TetModel};
use crate::nn::{lr_at_epoch, Adam, AdamConfig, Gradients, Graph, ParameterStore};
use crate::scoring::{graph_loss, LossConfig};

/// One line of the NDJSON metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogRecord {
    Epoch {
        epoch: usize,
        lr: f64,
        loss: f64,
    },
    Validation {
        epoch: usize,
        queries: usize,
        mrr: f64,
        hit1: f64,
        hit3: f64,
        hit10: f64,
    },
}

// Independent random streams derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_DROP: u64 = 2;
const STREAM_TRAIN: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Applies the configured neighbor dropping (a no-op at rate 0).
pub fn prepare_graph(kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<KnowledgeGraph, DataError> {
    let kg = if kg.neighbors().include_inverse() == cfg.include_inverse {
        kg.clone()
    } else {
        let index = kg.build_neighbor_index(cfg.include_inverse);
        kg.clone().with_neighbors(index)
    };
    if cfg.drop_rate == 0.0 {
        return Ok(kg);
    }
    drop_neighbors(&kg, cfg.drop_rate, cfg.drop_mode, &mut stream(cfg.seed, STREAM_DROP))
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TetModel,
    /// The graph the model was trained on (after dropping).
    pub graph: KnowledgeGraph,
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<LogRecord>,
}

/// Epoch-level driver over a fixed dataset and configuration.
pub struct Trainer {
    kg: KnowledgeGraph,
    fingerprints: VocabFingerprints,
    cfg: TrainConfig,
    loss: LossConfig,
    model: TetModel,
    store: ParameterStore<f32>,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    entities: Vec<EntityId>,
    pool: Option<rayon::ThreadPool>,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate().map_err(TrainError::Config)?;
        let mut store = ParameterStore::new();
        // Sequence lengths come from the undropped graph so that checkpoints
        // restore against it.
        let model = TetModel::new(kg, cfg.model_config(), &mut store, &mut stream(cfg.seed, STREAM_INIT))
            .map_err(TrainError::Config)?;
        let graph = prepare_graph(kg, cfg)?;
        let entities = graph.entities_in(Split::Train);
        if entities.is_empty() {
            return Err(TrainError::Config("the train split has no type assertions".into()));
        }
        let workers = cfg.workers();
        let pool = (workers > 1).then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .expect("thread pool")
        });
        Ok(Self {
            fingerprints: VocabFingerprints::of(kg),
            kg: graph,
            loss: cfg.loss_config(),
            adam: Adam::new(AdamConfig::default(), &store),
            model,
            store,
            rng: stream(cfg.seed, STREAM_TRAIN),
            cfg: cfg.clone(),
            entities,
            pool,
            epoch: 0,
            step: 0,
        })
    }

    pub fn model(&self) -> &TetModel {
        &self.model
    }

    pub fn store(&self) -> &ParameterStore<f32> {
        &self.store
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.kg
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn sample(&mut self, e: EntityId) -> EntityInput {
        EntityInput {
            entity: e,
            sample: sample_neighbors(
                self.kg.neighbors(),
                e,
                self.cfg.type_sample,
                self.cfg.rel_sample,
                &mut self.rng,
            ),
        }
    }

    /// One optimizer step on `batch`; returns the mean loss over its
    /// entities.
    fn step(&mut self, batch: &[EntityId], lr: f64) -> Result<f64, TrainError> {
        let inputs: Vec<EntityInput> = batch.iter().map(|&e| self.sample(e)).collect();
        let labels: Vec<bool> = batch
            .iter()
            .flat_map(|&e| self.kg.positive_label_row(e, &[Split::Train]))
            .collect();
        let workers = self.cfg.workers().min(batch.len());
        let chunk = batch.len().div_ceil(workers);
        let seeds: Vec<u64> = (0..batch.len().div_ceil(chunk)).map(|_| self.rng.random()).collect();
        let l = self.model.num_types();
        let total = batch.len() as f32;
        let (model, store, kg, loss_cfg) = (&self.model, &self.store, &self.kg, &self.loss);
        let run_chunk = |(i, seed): (usize, &u64)| -> (f64, Gradients<f32>) {
            let part = &inputs[i * chunk..((i + 1) * chunk).min(inputs.len())];
            let y = &labels[i * chunk * l..(i * chunk + part.len()) * l];
            let mut g = Graph::training(store, *seed);
            let out = model.forward(&mut g, kg, part);
            let loss = graph_loss(&mut g, out.logits, y, loss_cfg);
            let mut grads = g.backward(loss);
            let share = part.len() as f32 / total;
            grads.scale(share);
            (f64::from(g.value(loss).data()[0]) * f64::from(share), grads)
        };
        let results: Vec<(f64, Gradients<f32>)> = match &self.pool {
            Some(pool) => pool.install(|| seeds.par_iter().enumerate().map(run_chunk).collect()),
            None => seeds.iter().enumerate().map(run_chunk).collect(),
        };
        let mut loss = 0.0;
        let mut grads = Gradients::empty(self.store.len());
        for (chunk_loss, chunk_grads) in &results {
            loss += chunk_loss;
            grads.accumulate(chunk_grads);
        }
        if !loss.is_finite() || !grads.global_norm().is_finite() {
            let v = self.kg.vocab();
            return Err(TrainError::NonFiniteLoss {
                epoch: self.epoch,
                step: self.step,
                entities: batch.iter().map(|e| v.entities.label(e.index()).to_string()).collect(),
            });
        }
        if let Some(clip) = self.cfg.grad_clip {
            let norm = f64::from(grads.global_norm());
            if norm > clip {
                grads.scale((clip / norm) as f32);
            }
        }
        self.adam.step(&mut self.store, &grads, lr);
        self.step += 1;
        Ok(loss)
    }

    /// Runs one epoch and returns `(lr, mean loss over entities)`.
    pub fn run_epoch(&mut self) -> Result<(f64, f64), TrainError> {
        let lr = lr_at_epoch(self.cfg.lr, self.cfg.warmup, self.epoch);
        let mut order = self.entities.clone();
        order.shuffle(&mut self.rng);
        let mut weighted = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            weighted += self.step(batch, lr)? * batch.len() as f64;
        }
        self.epoch += 1;
        Ok((lr, weighted / order.len() as f64))
    }

    /// Filtered metrics on the validation split; parameters are untouched.
    pub fn validate(&self) -> MetricsReport {
        let neighbors = if self.cfg.full_valid {
            NeighborMode::All
        } else {
            NeighborMode::Sampled {
                k_type: self.cfg.type_sample,
                k_rel: self.cfg.rel_sample,
                seed: self.cfg.seed.wrapping_add(self.epoch as u64),
            }
        };
        let opts = EvalOptions {
            split: Split::Valid,
            tie_policy: self.cfg.tie_policy,
            neighbors,
            threads: self.cfg.workers(),
        };
        evaluate(&self.model, &self.store, &self.kg, &opts).report
    }

    pub fn checkpoint(&self, best: Option<(f64, usize)>) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            fingerprints: self.fingerprints.clone(),
            params: self.store.clone(),
            optimizer: self.adam.clone(),
            epochs_completed: self.epoch,
            best_mrr: best.map(|b| b.0),
            best_epoch: best.map(|b| b.1),
        }
    }

    /// Trains for the configured number of epochs, validating every
    /// `valid_every` epochs and after the last one, and keeps the
    /// checkpoint with the highest validation MRR.
    pub fn run(mut self, sink: &mut dyn FnMut(&LogRecord)) -> Result<TrainOutcome, TrainError> {
        let has_valid = self.kg.assertions_in(Split::Valid).next().is_some();
        let mut log = Vec::new();
        let mut best: Option<(f64, usize, Checkpoint)> = None;
        let mut emit = |r: LogRecord, log: &mut Vec<LogRecord>| {
            sink(&r);
            log.push(r);
        };
        for epoch in 0..self.cfg.epochs {
            let (lr, loss) = self.run_epoch()?;
            emit(LogRecord::Epoch { epoch, lr, loss }, &mut log);
            let due = (epoch + 1) % self.cfg.valid_every == 0 || epoch + 1 == self.cfg.epochs;
            if due && has_valid {
                let m = self.validate();
                emit(
                    LogRecord::Validation {
                        epoch,
                        queries: m.queries,
                        mrr: m.mrr,
                        hit1: m.hit1,
                        hit3: m.hit3,
                        hit10: m.hit10,
                    },
                    &mut log,
                );
                if best.as_ref().is_none_or(|(b, _, _)| m.mrr > *b) {
                    best = Some((m.mrr, epoch, self.checkpoint(Some((m.mrr, epoch)))));
                }
            }
        }
        let summary = best.as_ref().map(|(m, e, _)| (*m, *e));
        let last = self.checkpoint(summary);
        let best = best.map_or_else(|| last.clone(), |(_, _, ck)| ck);
        Ok(TrainOutcome {
            model: self.model,
            graph: self.kg,
            best,
            last,
            log,
        })
    }
}

/// Trains a model from scratch on `kg`.
pub fn train(
    kg: &KnowledgeGraph,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutcome, TrainError> {
    Trainer::new(kg, cfg)?.run(sink)
}
