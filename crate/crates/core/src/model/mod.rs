//! Sequence construction, the local / global / context encoders, relation
//! semantic enhancement and the shared type-scoring head.

mod sequences;
mod tet;
mod tokens;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::Reduce;
use crate::transformer::{Activation, EncoderConfig};

pub use sequences::{
    build_plan, BatchPlan, Enhancement, EntityInput, PlanOptions, SequenceBatch, SequenceKind, Slot, Source,
};
pub use tet::{ForwardOutput, ModelParams, SequenceLengths, TetModel};
pub use tokens::{TokenKind, TokenVocabulary};

/// Which encoding mechanisms contribute score sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModuleFlags {
    pub local: bool,
    pub global: bool,
    pub context: bool,
}

impl Default for ModuleFlags {
    fn default() -> Self {
        Self::ALL
    }
}

impl ModuleFlags {
    pub const ALL: ModuleFlags = ModuleFlags {
        local: true,
        global: true,
        context: true,
    };

    pub const NONE: ModuleFlags = ModuleFlags {
        local: false,
        global: false,
        context: false,
    };

    pub fn any(self) -> bool {
        self.local || self.global || self.context
    }

    /// The seven non-empty combinations.
    pub fn combinations() -> Vec<ModuleFlags> {
        (1u8..8)
            .map(|bits| ModuleFlags {
                local: bits & 1 != 0,
                global: bits & 2 != 0,
                context: bits & 4 != 0,
            })
            .collect()
    }

    /// Enables one module by name (`local`, `global` or `context`).
    pub fn enable(&mut self, name: &str) -> Result<(), String> {
        match name.trim().to_ascii_lowercase().as_str() {
            "local" => self.local = true,
            "global" => self.global = true,
            "context" => self.context = true,
            other => return Err(format!("unknown module `{other}` (expected local, global or context)")),
        }
        Ok(())
    }
}

impl fmt::Display for ModuleFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.local, "local"), (self.global, "global"), (self.context, "context")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

/// How the outputs of a relation-enhancement sequence are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RseMode {
    #[default]
    Off,
    Avg,
    Max,
    Min,
}

impl RseMode {
    pub fn reduce(self) -> Option<Reduce> {
        match self {
            RseMode::Off => None,
            RseMode::Avg => Some(Reduce::Mean),
            RseMode::Max => Some(Reduce::Max),
            RseMode::Min => Some(Reduce::Min),
        }
    }
}

impl FromStr for RseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "off" | "none" => Ok(RseMode::Off),
            "avg" | "mean" => Ok(RseMode::Avg),
            "max" => Ok(RseMode::Max),
            "min" => Ok(RseMode::Min),
            _ => Err(format!("unknown enhancement mode `{s}` (expected off, avg, max or min)")),
        }
    }
}

impl fmt::Display for RseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RseMode::Off => "off",
            RseMode::Avg => "avg",
            RseMode::Max => "max",
            RseMode::Min => "min",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub input_dropout: bool,
    pub modules: ModuleFlags,
    /// Rewrite type neighbors into type-class neighbors; when off every type
    /// neighbor uses the single `has_type` relation.
    pub use_classes: bool,
    pub rse: RseMode,
    /// Typed neighbors of `f` kept in a relation-enhancement sequence.
    pub rse_type_cap: usize,
    /// Pooling temperature.
    pub alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            num_layers: 3,
            num_heads: 4,
            ffn_dim: 480,
            dropout: 0.2,
            activation: Activation::Relu,
            input_dropout: true,
            modules: ModuleFlags::ALL,
            use_classes: true,
            rse: RseMode::Off,
            rse_type_cap: 3,
            alpha: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.modules.any() {
            return Err("at least one of the local, global and context modules must be enabled".into());
        }
        if !self.alpha.is_finite() {
            return Err(format!("pooling temperature {} is not finite", self.alpha));
        }
        if self.dim == 0 {
            return Err("embedding dim must be positive".into());
        }
        self.encoder(1).validate()
    }

    /// Encoder settings for sequences of at most `max_seq_len` tokens.
    pub fn encoder(&self, max_seq_len: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            model_dim: self.dim,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            max_seq_len,
            activation: self.activation,
            input_dropout: self.input_dropout,
        }
    }

    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            modules: self.modules,
            use_classes: self.use_classes,
            rse: self.rse,
            rse_type_cap: self.rse_type_cap,
        }
    }
}
