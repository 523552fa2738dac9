use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Graph, Real, Tensor, Var};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Fna,
    #[default]
    Sfna,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Bce, LossKind::Fna, LossKind::Sfna];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Fna => "fna",
            LossKind::Sfna => "sfna",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown loss `{s}` (expected bce, fna or sfna)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("weight argument {0} is outside [0, 1]")]
pub struct WeightDomainError(pub f64);

/// Weight applied to the log-term of a negative type as a function of its
/// predicted probability.
pub trait NegativeWeight: fmt::Debug + Send + Sync {
    fn weight(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    /// Identifies the smooth piece containing `x` for piecewise weights.
    fn piece(&self, _x: f64) -> bool {
        false
    }
}

/// `f(x) = 3x - 2x^2` on `[0, 0.5]` and `x - 2x^2 + 1` on `(0.5, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SfnaWeight;

impl NegativeWeight for SfnaWeight {
    fn weight(&self, x: f64) -> f64 {
        if x <= 0.5 {
            3.0 * x - 2.0 * x * x
        } else {
            x - 2.0 * x * x + 1.0
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        if x <= 0.5 {
            3.0 - 4.0 * x
        } else {
            1.0 - 4.0 * x
        }
    }

    fn piece(&self, x: f64) -> bool {
        x <= 0.5
    }
}

/// `4x(1 - x)`: the smooth bump used for the plain FNA loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct FnaBump;

impl NegativeWeight for FnaBump {
    fn weight(&self, x: f64) -> f64 {
        4.0 * x * (1.0 - x)
    }

    fn derivative(&self, x: f64) -> f64 {
        4.0 - 8.0 * x
    }
}

/// Constant weight 1 (plain binary cross-entropy).
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitWeight;

impl NegativeWeight for UnitWeight {
    fn weight(&self, _x: f64) -> f64 {
        1.0
    }

    fn derivative(&self, _x: f64) -> f64 {
        0.0
    }
}

/// Checked evaluation of the SFNA weight.
pub fn sfna_weight(x: f64) -> Result<f64, WeightDomainError> {
    if (0.0..=1.0).contains(&x) {
        Ok(SfnaWeight.weight(x))
    } else {
        Err(WeightDomainError(x))
    }
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight used when `kind` is [`LossKind::Fna`].
    pub fna_weight: Arc<dyn NegativeWeight>,
    /// Treat negative weights as constants when differentiating.
    pub stop_gradient: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::new(LossKind::default())
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            fna_weight: Arc::new(FnaBump),
            stop_gradient: true,
        }
    }

    pub fn with_stop_gradient(mut self, on: bool) -> Self {
        self.stop_gradient = on;
        self
    }

    pub fn with_fna_weight(mut self, w: Arc<dyn NegativeWeight>) -> Self {
        self.fna_weight = w;
        self
    }

    pub fn weight_fn(&self) -> &dyn NegativeWeight {
        match self.kind {
            LossKind::Bce => &UnitWeight,
            LossKind::Fna => self.fna_weight.as_ref(),
            LossKind::Sfna => &SfnaWeight,
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Weights of the negative terms (zero on positives), evaluated at the
/// clamped probabilities.
pub fn negative_weights(probs: &[f64], labels: &[bool], cfg: &LossConfig) -> Vec<f64> {
    assert_eq!(probs.len(), labels.len(), "label row length must equal the number of types");
    let w = cfg.weight_fn();
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if y { 0.0 } else { w.weight(clamp_prob(p)) })
        .collect()
}

/// Loss of one entity: `-sum_pos log s - sum_neg w(s') log(1 - s')`.
pub fn entity_loss(probs: &[f64], labels: &[bool], cfg: &LossConfig) -> f64 {
    let weights = negative_weights(probs, labels, cfg);
    probs
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&p, &y), w)| {
            let p = clamp_prob(p);
            if y {
                -p.ln()
            } else {
                -w * (1.0 - p).ln()
            }
        })
        .sum()
}

/// Mean of [`entity_loss`] over a batch.
pub fn batch_loss(probs: &[Vec<f64>], labels: &[Vec<bool>], cfg: &LossConfig) -> f64 {
    assert_eq!(probs.len(), labels.len(), "one label row per entity");
    assert!(!probs.is_empty(), "empty batch");
    let total: f64 = probs.iter().zip(labels).map(|(p, y)| entity_loss(p, y, cfg)).sum();
    total / probs.len() as f64
}

/// Records the loss of a `B x L` logit matrix on `g` and returns the scalar
/// node. `labels` is the row-major `B x L` positive mask.
pub fn graph_loss<F: Real>(g: &mut Graph<'_, F>, logits: Var, labels: &[bool], cfg: &LossConfig) -> Var {
    let (s, probs) = clamped_probabilities(g, logits, labels);
    if cfg.stop_gradient || cfg.kind == LossKind::Bce {
        let weights = negative_weights(&probs, labels, cfg);
        return assemble(g, s, labels, NegWeights::Frozen(&weights));
    }
    let wf = cfg.weight_fn();
    g.note_branches(probs.iter().map(|&p| wf.piece(p)));
    // First-order expansion around the current probabilities: its value is
    // exactly w(s) and its derivative is w'(s).
    let slope: Vec<F> = probs.iter().map(|&p| F::of(wf.derivative(p))).collect();
    let offset: Vec<F> = probs
        .iter()
        .map(|&p| F::of(wf.weight(p) - wf.derivative(p) * p))
        .collect();
    let shape = g.value(s).shape().to_vec();
    let sw = g.mul_const(s, slope);
    let off = g.constant(Tensor::new(shape, offset));
    let w = g.add(sw, off);
    assemble(g, s, labels, NegWeights::Live(w))
}

/// Like [`graph_loss`] with the negative weights supplied by the caller and
/// held constant.
pub fn graph_loss_with_weights<F: Real>(
    g: &mut Graph<'_, F>,
    logits: Var,
    labels: &[bool],
    weights: &[f64],
) -> Var {
    let (s, _) = clamped_probabilities(g, logits, labels);
    assemble(g, s, labels, NegWeights::Frozen(weights))
}

enum NegWeights<'w> {
    Frozen(&'w [f64]),
    Live(Var),
}

fn clamped_probabilities<F: Real>(g: &mut Graph<'_, F>, logits: Var, labels: &[bool]) -> (Var, Vec<f64>) {
    assert_eq!(g.value(logits).len(), labels.len(), "label mask must match the logit matrix");
    let p = g.sigmoid(logits);
    let s = g.clamp(p, F::of(PROB_EPS), F::of(1.0 - PROB_EPS));
    let probs = g.value(s).to_f64_vec();
    (s, probs)
}

fn assemble<F: Real>(g: &mut Graph<'_, F>, s: Var, labels: &[bool], weights: NegWeights<'_>) -> Var {
    let batch = g.value(s).rows();
    let pos_mask: Vec<F> = labels.iter().map(|&y| if y { F::one() } else { F::zero() }).collect();
    let ln_s = g.ln(s);
    let pos = g.mul_const(ln_s, pos_mask);

    let one_minus = g.affine(s, -F::one(), F::one());
    let ln_1ms = g.ln(one_minus);
    let neg = match weights {
        NegWeights::Frozen(w) => {
            assert_eq!(w.len(), labels.len(), "one weight per logit");
            let c = w
                .iter()
                .zip(labels)
                .map(|(&w, &y)| if y { F::zero() } else { F::of(w) })
                .collect();
            g.mul_const(ln_1ms, c)
        }
        NegWeights::Live(w) => {
            let weighted = g.mul(w, ln_1ms);
            let neg_mask = labels.iter().map(|&y| if y { F::zero() } else { F::one() }).collect();
            g.mul_const(weighted, neg_mask)
        }
    };
    let both = g.add(pos, neg);
    let total = g.sum(both);
    g.scale(total, F::of(-1.0 / batch as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParameterStore;

    #[test]
    fn sfna_weight_values() {
        assert_eq!(sfna_weight(0.0), Ok(0.0));
        assert_eq!(sfna_weight(1.0), Ok(0.0));
        assert_eq!(sfna_weight(0.5), Ok(1.0));
        assert_eq!(sfna_weight(0.25), Ok(0.625));
        assert_eq!(sfna_weight(0.75), Ok(0.625));
        assert!(sfna_weight(1.01).is_err());
        assert!(sfna_weight(-0.1).is_err());
        assert!(sfna_weight(f64::NAN).is_err());
    }

    #[test]
    fn single_term_examples() {
        let cfg = LossConfig::new(LossKind::Sfna);
        assert!((entity_loss(&[0.5], &[true], &cfg) - 2f64.ln()).abs() < 1e-12);
        assert!((entity_loss(&[0.5], &[false], &cfg) - 2f64.ln()).abs() < 1e-12);
        for kind in LossKind::ALL {
            let cfg = LossConfig::new(kind);
            let l = entity_loss(&[1.0, 0.0, 0.0], &[true, false, false], &cfg);
            assert!(l < 1e-6, "{kind}: {l}");
        }
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("SFNA".parse::<LossKind>(), Ok(LossKind::Sfna));
        assert_eq!("bce".parse::<LossKind>(), Ok(LossKind::Bce));
        assert!("hinge".parse::<LossKind>().is_err());
    }

    #[test]
    fn graph_matches_reference() {
        let logits = vec![0.3, -2.0, 4.0, 0.0, 1.5, -0.7];
        let labels = vec![true, false, false, false, true, false];
        let store = ParameterStore::<f64>::new();
        for kind in LossKind::ALL {
            for stop in [true, false] {
                let cfg = LossConfig::new(kind).with_stop_gradient(stop);
                let mut g = Graph::new(&store);
                let x = g.constant(Tensor::matrix(2, 3, logits.clone()));
                let l = graph_loss(&mut g, x, &labels, &cfg);
                let probs: Vec<Vec<f64>> = logits
                    .chunks(3)
                    .map(|r| r.iter().map(|&z| 1.0 / (1.0 + (-z as f64).exp())).collect())
                    .collect();
                let rows: Vec<Vec<bool>> = labels.chunks(3).map(<[bool]>::to_vec).collect();
                let expected = batch_loss(&probs, &rows, &cfg);
                assert!((g.value(l).data()[0] - expected).abs() < 1e-12, "{kind} {stop}");
            }
        }
    }
}
