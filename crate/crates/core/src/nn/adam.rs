use serde::{Deserialize, Serialize};

use super::{Gradients, ParameterStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
///
/// Parameters that received no gradient in a step (`Gradients::get` is
/// `None`) are left untouched, moments included.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    config: AdamConfig,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new<G>(config: AdamConfig, store: &ParameterStore<G>) -> Self
    where
        G: Real,
    {
        let zeros: Vec<Vec<F>> = store.iter().map(|(_, _, t)| vec![F::zero(); t.len()]).collect();
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Rebuilds an optimizer from saved state.
    pub fn from_state(config: AdamConfig, t: u64, m: Vec<Vec<F>>, v: Vec<Vec<F>>) -> Self {
        assert_eq!(m.len(), v.len(), "moment lists differ in length");
        Self { config, t, m, v }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// Number of steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<F>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<F>] {
        &self.v
    }

    pub fn step(&mut self, store: &mut ParameterStore<F>, grads: &Gradients<F>, lr: f64) {
        assert_eq!(self.m.len(), store.len(), "optimizer built for a different store");
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.t.min(i32::MAX as u64) as i32);
        let (b1, b2) = (F::of(beta1), F::of(beta2));
        let (one_b1, one_b2) = (F::of(1.0 - beta1), F::of(1.0 - beta2));
        let step = F::of(lr / c1);
        let inv_c2 = F::of(1.0 / c2);
        let eps = F::of(eps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                p[i] = p[i] - step * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            }
        }
    }
}
