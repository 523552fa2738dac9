use serde::{Deserialize, Serialize};

use crate::eval::TiePolicy;
use crate::kg::DropMode;
use crate::model::{ModelConfig, ModuleFlags, RseMode};
use crate::scoring::{LossConfig, LossKind};
use crate::transformer::Activation;

/// Every knob of a training run. Serialises to a flat TOML table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup: usize,
    pub valid_every: usize,
    pub lr: f64,
    pub alpha: f64,
    pub type_sample: usize,
    pub rel_sample: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub input_dropout: bool,
    pub activation: Activation,
    pub loss: LossKind,
    /// Hold negative-term weights constant during differentiation.
    pub stop_gradient: bool,
    pub local: bool,
    pub global: bool,
    pub context: bool,
    pub use_classes: bool,
    pub rse: RseMode,
    pub rse_type_cap: usize,
    pub include_inverse: bool,
    pub drop_rate: f64,
    pub drop_mode: DropMode,
    /// Validate with all neighbors instead of training-size samples.
    pub full_valid: bool,
    pub tie_policy: TiePolicy,
    /// Global gradient-norm clipping threshold.
    pub grad_clip: Option<f64>,
    pub threads: usize,
    /// Force a single worker so results do not depend on `threads`.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            seed: 42,
            dim: m.dim,
            batch_size: 128,
            epochs: 500,
            warmup: 50,
            valid_every: 25,
            lr: 1e-3,
            alpha: m.alpha,
            type_sample: 3,
            rel_sample: 7,
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            ffn_dim: m.ffn_dim,
            dropout: m.dropout,
            input_dropout: m.input_dropout,
            activation: m.activation,
            loss: LossKind::Sfna,
            stop_gradient: true,
            local: true,
            global: true,
            context: true,
            use_classes: true,
            rse: RseMode::Off,
            rse_type_cap: m.rse_type_cap,
            include_inverse: true,
            drop_rate: 0.0,
            drop_mode: DropMode::RelationalNeighbors,
            full_valid: false,
            tie_policy: TiePolicy::Optimistic,
            grad_clip: None,
            threads: 1,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn modules(&self) -> ModuleFlags {
        ModuleFlags {
            local: self.local,
            global: self.global,
            context: self.context,
        }
    }

    pub fn set_modules(&mut self, m: ModuleFlags) {
        self.local = m.local;
        self.global = m.global;
        self.context = m.context;
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            activation: self.activation,
            input_dropout: self.input_dropout,
            modules: self.modules(),
            use_classes: self.use_classes,
            rse: self.rse,
            rse_type_cap: self.rse_type_cap,
            alpha: self.alpha,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig::new(self.loss).with_stop_gradient(self.stop_gradient)
    }

    /// Worker count actually used.
    pub fn workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.max(1)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("valid_every", self.valid_every),
            ("threads", self.threads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(format!("drop rate {} outside [0, 1)", self.drop_rate));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(format!("gradient clip {c} must be positive"));
            }
        }
        self.model_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.dim, c.batch_size, c.epochs, c.warmup, c.valid_every),
            (100, 128, 500, 50, 25)
        );
        assert_eq!((c.type_sample, c.rel_sample), (3, 7));
        assert_eq!((c.alpha, c.lr), (0.5, 0.001));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn serde_round_trip() {
        let c = TrainConfig {
            loss: LossKind::Fna,
            rse: RseMode::Max,
            grad_clip: Some(5.0),
            ..TrainConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                drop_rate: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                num_heads: 3,
                ..TrainConfig::default()
            },
            TrainConfig {
                local: false,
                global: false,
                context: false,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
