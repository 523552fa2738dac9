//! Optimisation loop, checkpoints and whole-model gradient checks.

mod checkpoint;
mod config;
mod gradients;
mod trainer;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, VocabFingerprints, FORMAT_VERSION, MAGIC,
};
pub use config::TrainConfig;
pub use gradients::{check_model_gradients, ModelCheckOptions};
pub use trainer::{prepare_graph, train, LogRecord, TrainOutcome, Trainer};
