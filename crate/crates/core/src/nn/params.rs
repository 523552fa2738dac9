use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Real, Tensor};

/// Stable handle to a tensor in a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Parameter initialisers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Glorot/Xavier uniform over the last two dimensions.
    XavierUniform,
}

/// Named trainable tensors in registration order.
///
/// Iteration order is the registration order, which is what checkpoints rely
/// on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore<F> {
    entries: IndexMap<String, Tensor<F>>,
}

impl<F: Real> ParameterStore<F> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    /// Panics if `name` is already registered.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        let (i, old) = self.entries.insert_full(name.clone(), value);
        assert!(old.is_none(), "duplicate parameter name `{name}`");
        ParamId(i)
    }

    pub fn register<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<F> = match init {
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| F::of(d.sample(rng))).collect()
            }
            Init::XavierUniform => {
                let (fan_out, fan_in) = match shape.as_slice() {
                    [r, c] => (*r, *c),
                    [c] => (1, *c),
                    _ => (n, n),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let d = Uniform::new_inclusive(-a, a).expect("valid range");
                (0..n).map(|_| F::of(d.sample(rng))).collect()
            }
        };
        self.insert(name, Tensor::new(shape, data))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).expect("valid parameter id").0
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn cast<G: Real>(&self) -> ParameterStore<G> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}
