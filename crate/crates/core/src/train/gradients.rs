use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kg::{EntityId, KnowledgeGraph, Split};
use crate::model::{EntityInput, ModelConfig, TetModel};
use crate::nn::{grad_check, Evaluation, GradCheckConfig, GradCheckError, GradCheckReport, Graph, ParameterStore};
use crate::scoring::{graph_loss, graph_loss_with_weights, negative_weights, to_probabilities, LossConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckOptions {
    /// Entities in the checked batch; all entities with train assertions
    /// when `None`.
    pub entities: Option<Vec<EntityId>>,
    /// Seed of the parameter initialisation.
    pub seed: u64,
    pub check: GradCheckConfig,
}

impl Default for ModelCheckOptions {
    fn default() -> Self {
        Self {
            entities: None,
            seed: 0,
            check: GradCheckConfig::default(),
        }
    }
}

/// Finite-difference check of the full score path and loss in 64-bit
/// precision, with dropout off and all neighbors.
///
/// When the loss holds its negative weights constant, they are evaluated once
/// at the unperturbed parameters so that the finite differences see the same
/// objective the analytic gradient describes.
pub fn check_model_gradients(
    kg: &KnowledgeGraph,
    model_cfg: &ModelConfig,
    loss: &LossConfig,
    opts: &ModelCheckOptions,
) -> Result<GradCheckReport, GradCheckError> {
    let cfg = ModelConfig {
        dropout: 0.0,
        ..model_cfg.clone()
    };
    let mut store = ParameterStore::<f64>::new();
    let model = TetModel::new(kg, cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(opts.seed))
        .expect("valid model configuration");
    let entities = opts.entities.clone().unwrap_or_else(|| kg.entities_in(Split::Train));
    let inputs: Vec<EntityInput> = entities.iter().map(|&e| EntityInput::full(kg, e)).collect();
    let labels: Vec<bool> = entities
        .iter()
        .flat_map(|&e| kg.positive_label_row(e, &[Split::Train]))
        .collect();
    let plan = model.plan(kg, &inputs);

    let frozen = loss.stop_gradient.then(|| {
        let mut g = Graph::new(&store);
        let out = model.forward_plan(&mut g, &plan);
        let probs = to_probabilities(&g.value(out.logits).to_f64_vec());
        negative_weights(&probs, &labels, loss)
    });

    let objective = |s: &ParameterStore<f64>| {
        let mut g = Graph::new(s).with_kink_tracking();
        let out = model.forward_plan(&mut g, &plan);
        let l = match &frozen {
            Some(w) => graph_loss_with_weights(&mut g, out.logits, &labels, w),
            None => graph_loss(&mut g, out.logits, &labels, loss),
        };
        Evaluation {
            loss: g.value(l).data()[0],
            grads: Some(g.backward(l)),
            kink_signature: g.kink_signature(),
        }
    };
    grad_check(&store, objective, &opts.check)
}
