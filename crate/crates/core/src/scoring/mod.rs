//! Score pooling and the BCE / FNA / SFNA losses.

mod loss;
mod pool;

pub use loss::{
    batch_loss, entity_loss, graph_loss, graph_loss_with_weights, negative_weights, sfna_weight,
    FnaBump, LossConfig, LossKind, NegativeWeight, SfnaWeight, UnitWeight, WeightDomainError,
    PROB_EPS,
};
pub use pool::{exp_weighted_pool, pool_weights, to_probabilities, ScoreSet};
