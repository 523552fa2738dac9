use crate::nn::graph::softmax_into;

/// Per-source score vectors for one entity, all of length `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    num_types: usize,
    sources: Vec<Vec<f64>>,
}

impl ScoreSet {
    /// Panics on an empty set or ragged rows.
    pub fn new(sources: Vec<Vec<f64>>) -> Self {
        assert!(!sources.is_empty(), "a score set needs at least one source");
        let num_types = sources[0].len();
        assert!(
            sources.iter().all(|s| s.len() == num_types),
            "all sources must score the same number of types"
        );
        Self { num_types, sources }
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self) -> &[Vec<f64>] {
        &self.sources
    }
}

/// `w[i][k] = softmax_i(alpha * S_i[k])`.
pub fn pool_weights(scores: &ScoreSet, alpha: f64) -> Vec<Vec<f64>> {
    assert!(alpha.is_finite(), "pooling temperature must be finite");
    let n = scores.num_sources();
    let mut weights = vec![vec![0.0; scores.num_types]; n];
    let mut column = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for k in 0..scores.num_types {
        column.clear();
        column.extend(scores.sources.iter().map(|s| alpha * s[k]));
        w.clear();
        softmax_into(&column, &mut w);
        for (i, wi) in w.iter().enumerate() {
            weights[i][k] = *wi;
        }
    }
    weights
}

/// Exponentially weighted pooling: `S_e[k] = sum_i w_i(k) S_i[k]`.
pub fn exp_weighted_pool(scores: &ScoreSet, alpha: f64) -> Vec<f64> {
    let weights = pool_weights(scores, alpha);
    (0..scores.num_types)
        .map(|k| {
            scores
                .sources
                .iter()
                .zip(&weights)
                .map(|(s, w)| w[k] * s[k])
                .sum()
        })
        .collect()
}

pub fn to_probabilities(pooled: &[f64]) -> Vec<f64> {
    pooled.iter().map(|&x| crate::nn::graph::sigmoid(x)).collect()
}
