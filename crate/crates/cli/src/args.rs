use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tet_core::kg::DropMode;
use tet_core::model::{ModuleFlags, RseMode};
use tet_core::transformer::Activation;
use tet_core::{LossKind, Split, TiePolicy, TrainConfig};

use crate::error::CliError;

/// Knowledge graph entity typing with local, global and context transformers.
#[derive(Debug, Parser)]
#[command(name = "tet", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print dataset statistics as JSON.
    Stats(StatsArgs),
    /// Train a model and write checkpoints, logs and the resolved config.
    Train(TrainArgs),
    /// Score a split with a checkpoint and report filtered metrics.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the full model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset directory (train_triples.txt, {train,valid,test}_tuples.txt).
    #[arg(long, env = "TET_DATA_DIR")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Output directory for config.toml, metrics.ndjson, best.tetc and last.tetc.
    #[arg(long, default_value = "tet-run")]
    pub output: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Checkpoint written by `tet train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Overrides the tie policy stored in the checkpoint.
    #[arg(long)]
    pub tie_policy: Option<TiePolicy>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write the metrics JSON here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write one `entity,type,rank` CSV line per query.
    #[arg(long)]
    pub per_query: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Dataset to check on; the generated toy graph when omitted.
    #[arg(long, env = "TET_DATA_DIR")]
    pub data: Option<PathBuf>,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Coordinates sampled per parameter tensor.
    #[arg(long, default_value_t = 8)]
    pub coords: usize,
    /// Check only the first N training entities.
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Values that override the configuration file (or the defaults).
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML file with TrainConfig keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub valid_every: Option<usize>,
    /// Pooling temperature.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub type_sample: Option<usize>,
    #[arg(long)]
    pub rel_sample: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Skip dropout on the embedded input tokens.
    #[arg(long)]
    pub no_input_dropout: bool,
    #[arg(long)]
    pub activation: Option<Activation>,
    /// bce, fna or sfna.
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Let gradients flow through the negative-term weights.
    #[arg(long)]
    pub weight_gradients: bool,
    #[arg(long)]
    pub no_local: bool,
    #[arg(long)]
    pub no_global: bool,
    #[arg(long)]
    pub no_context: bool,
    /// Enable exactly the named modules (repeatable: local, global, context).
    #[arg(long = "module", value_name = "NAME")]
    pub modules: Vec<String>,
    /// Use the single has_type relation instead of per-class relations.
    #[arg(long)]
    pub no_class: bool,
    /// Relation semantic enhancement: off, avg, max or min.
    #[arg(long)]
    pub rse: Option<RseMode>,
    #[arg(long)]
    pub rse_type_cap: Option<usize>,
    /// Do not add inverse relational edges.
    #[arg(long)]
    pub no_inverse: bool,
    #[arg(long)]
    pub drop_rate: Option<f64>,
    /// relational-neighbors or relation-types.
    #[arg(long)]
    pub drop_mode: Option<DropMode>,
    /// Validate with all neighbors instead of training-size samples.
    #[arg(long)]
    pub full_valid: bool,
    #[arg(long)]
    pub tie_policy: Option<TiePolicy>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Serial numeric reduction regardless of --threads.
    #[arg(long)]
    pub deterministic: bool,
}

impl Overrides {
    /// Reads the configuration file (if any) over `base` and applies every
    /// flag on top.
    pub fn resolve(&self, base: TrainConfig) -> Result<TrainConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => base,
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$field = v; })*
            };
        }
        set!(
            seed => seed, epochs => epochs, dim => dim, batch_size => batch_size, lr => lr,
            warmup => warmup, valid_every => valid_every, alpha => alpha,
            type_sample => type_sample, rel_sample => rel_sample, layers => num_layers,
            heads => num_heads, ffn_dim => ffn_dim, dropout => dropout, activation => activation,
            loss => loss, rse => rse, rse_type_cap => rse_type_cap, drop_rate => drop_rate,
            drop_mode => drop_mode, tie_policy => tie_policy, threads => threads,
        );
        if self.grad_clip.is_some() {
            c.grad_clip = self.grad_clip;
        }
        if self.weight_gradients {
            c.stop_gradient = false;
        }
        if !self.modules.is_empty() {
            let mut m = ModuleFlags::NONE;
            for name in &self.modules {
                m.enable(name).map_err(CliError::Usage)?;
            }
            c.set_modules(m);
        }
        c.local &= !self.no_local;
        c.global &= !self.no_global;
        c.context &= !self.no_context;
        c.use_classes &= !self.no_class;
        c.include_inverse &= !self.no_inverse;
        c.input_dropout &= !self.no_input_dropout;
        c.full_valid |= self.full_valid;
        c.deterministic |= self.deterministic;
        c.validate().map_err(CliError::Usage)?;
        Ok(c)
    }
}
