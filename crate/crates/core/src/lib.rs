//! Transformer-based knowledge graph entity typing.
//!
//! The crate is organised bottom-up:
//!
//! * [`kg`] loads entity-typing datasets, rewrites type neighbors into
//!   type-class neighbors and samples neighborhoods.
//! * [`nn`] is a small reverse-mode autodiff engine (tape, primitives, Adam,
//!   learning-rate schedule and a finite-difference gradient checker).
//! * [`transformer`] is the post-layer-norm encoder shared by every sequence
//!   kind.
//! * [`model`] builds the local, global, context and relation-enhancement
//!   sequences and turns encodings into per-type scores.
//! * [`scoring`] pools per-source scores and computes the BCE / FNA / SFNA
//!   losses.
//! * [`train`] and [`eval`] drive optimisation, checkpointing and filtered
//!   ranking evaluation.

pub mod error;
pub mod eval;
pub mod kg;
pub mod model;
pub mod nn;
pub mod scoring;
pub mod train;
pub mod transformer;

pub use error::{CheckpointError, DataError, TrainError};
pub use eval::{evaluate, filtered_rank, hits_at_k, mrr, EvalOptions, MetricsReport, TiePolicy};
pub use kg::{
    load_dataset, DatasetStats, EntityId, KnowledgeGraph, LoadOptions, RelationId, Split, TypeId,
};
pub use model::{ModelConfig, ModuleFlags, RseMode, TetModel};
pub use nn::{Graph, ParameterStore, Real, Tensor};
pub use scoring::{LossConfig, LossKind};
pub use train::{load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig};
