//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tet_core::kg::synthetic::{toy_kg, ToyKgConfig};
use tet_core::{KnowledgeGraph, ParameterStore, TetModel, Tensor, TrainConfig};

/// A generated graph larger than the toy fixture so that batches are full.
pub fn bench_graph(entities: usize) -> KnowledgeGraph {
    toy_kg(&ToyKgConfig {
        entities,
        relations: 12,
        held_out: 0.1,
        seed: 3,
    })
}

/// Training configuration of the given width with otherwise default shape.
pub fn bench_config(dim: usize) -> TrainConfig {
    TrainConfig {
        dim,
        ffn_dim: 4 * dim,
        batch_size: 32,
        epochs: 1,
        deterministic: true,
        ..TrainConfig::default()
    }
}

pub fn model(kg: &KnowledgeGraph, cfg: &TrainConfig) -> (TetModel, ParameterStore<f32>) {
    let mut store = ParameterStore::new();
    let model = TetModel::new(kg, cfg.model_config(), &mut store, &mut ChaCha8Rng::seed_from_u64(1))
        .expect("valid benchmark configuration");
    (model, store)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}
