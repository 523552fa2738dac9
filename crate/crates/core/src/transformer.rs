//! Post-layer-norm transformer encoder used by every sequence kind.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Graph, Init, ParamId, ParameterStore, Real, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            _ => Err(format!("unknown activation `{s}` (expected relu or gelu)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub activation: Activation,
    /// Also apply dropout to the summed word + position embeddings.
    pub input_dropout: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            num_heads: 4,
            model_dim: 100,
            ffn_dim: 480,
            dropout: 0.2,
            max_seq_len: 64,
            activation: Activation::Relu,
            input_dropout: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(format!(
                "model dim {} is not divisible by {} heads",
                self.model_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_seq_len == 0 || self.ffn_dim == 0 {
            return Err("max_seq_len and ffn_dim must be positive".into());
        }
        Ok(())
    }
}

/// Parameter ids of one encoder layer. Weight matrices are stored
/// `(out x in)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ffn_in: ParamId,
    pub ffn_in_bias: ParamId,
    pub ffn_out: ParamId,
    pub ffn_out_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// Registers `cfg.num_layers` layers under `"{prefix}.layer{i}.*"`.
    pub fn register<F: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<F>,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.model_dim;
        let f = cfg.ffn_dim;
        let layers = (0..cfg.num_layers)
            .map(|i| {
                let mut reg = |name: &str, shape: Vec<usize>, init: Init| {
                    store.register(format!("{prefix}.layer{i}.{name}"), shape, init, rng)
                };
                LayerParams {
                    wq: reg("attn.query.weight", vec![d, d], Init::XavierUniform),
                    bq: reg("attn.query.bias", vec![d], Init::Zeros),
                    wk: reg("attn.key.weight", vec![d, d], Init::XavierUniform),
                    bk: reg("attn.key.bias", vec![d], Init::Zeros),
                    wv: reg("attn.value.weight", vec![d, d], Init::XavierUniform),
                    bv: reg("attn.value.bias", vec![d], Init::Zeros),
                    wo: reg("attn.output.weight", vec![d, d], Init::XavierUniform),
                    bo: reg("attn.output.bias", vec![d], Init::Zeros),
                    ln1_gain: reg("attn.norm.gain", vec![d], Init::Ones),
                    ln1_bias: reg("attn.norm.bias", vec![d], Init::Zeros),
                    ffn_in: reg("ffn.in.weight", vec![f, d], Init::XavierUniform),
                    ffn_in_bias: reg("ffn.in.bias", vec![f], Init::Zeros),
                    ffn_out: reg("ffn.out.weight", vec![d, f], Init::XavierUniform),
                    ffn_out_bias: reg("ffn.out.bias", vec![d], Init::Zeros),
                    ln2_gain: reg("ffn.norm.gain", vec![d], Init::Ones),
                    ln2_bias: reg("ffn.norm.bias", vec![d], Init::Zeros),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }
}

fn linear<F: Real>(g: &mut Graph<'_, F>, x: Var, w: ParamId, b: ParamId) -> Var {
    let wv = g.param(w);
    let bv = g.param(b);
    let y = g.matmul_t(x, wv);
    g.add_row(y, bv)
}

/// Encodes `B` packed sequences of length `seq_len`; `inputs` is
/// `(B * seq_len) x d` and already holds word + position embeddings.
/// `mask[i]` marks real (non-pad) rows.
pub fn encode<F: Real>(
    g: &mut Graph<'_, F>,
    inputs: Var,
    seq_len: usize,
    mask: &[bool],
    cfg: &EncoderConfig,
    params: &EncoderParams,
) -> Var {
    assert!(seq_len > 0, "cannot encode empty sequences");
    assert!(seq_len <= cfg.max_seq_len, "sequence length {seq_len} exceeds {}", cfg.max_seq_len);
    assert_eq!(g.value(inputs).rows(), mask.len(), "mask length must equal the number of input rows");
    assert_eq!(g.value(inputs).cols(), cfg.model_dim, "input width must equal model dim");
    let mut x = inputs;
    if cfg.input_dropout {
        x = g.dropout(x, cfg.dropout);
    }
    for layer in &params.layers {
        let q = linear(g, x, layer.wq, layer.bq);
        let k = linear(g, x, layer.wk, layer.bk);
        let v = linear(g, x, layer.wv, layer.bv);
        let att = g.attention(q, k, v, seq_len, cfg.num_heads, mask);
        let o = linear(g, att, layer.wo, layer.bo);
        let o = g.dropout(o, cfg.dropout);
        let res = g.add(x, o);
        let (gain, bias) = (g.param(layer.ln1_gain), g.param(layer.ln1_bias));
        let h = g.layer_norm(res, gain, bias, F::of(LN_EPS));

        let f = linear(g, h, layer.ffn_in, layer.ffn_in_bias);
        let f = match cfg.activation {
            Activation::Relu => g.relu(f),
            Activation::Gelu => g.gelu(f),
        };
        let f = linear(g, f, layer.ffn_out, layer.ffn_out_bias);
        let f = g.dropout(f, cfg.dropout);
        let res = g.add(h, f);
        let (gain, bias) = (g.param(layer.ln2_gain), g.param(layer.ln2_bias));
        x = g.layer_norm(res, gain, bias, F::of(LN_EPS));
    }
    x
}

/// Row 0 of every packed sequence, in batch order.
pub fn cls_of<F: Real>(g: &mut Graph<'_, F>, outputs: Var, seq_len: usize) -> Var {
    let rows = g.value(outputs).rows();
    assert!(rows > 0 && rows % seq_len == 0, "outputs are not packed sequences of length {seq_len}");
    let idx: Vec<usize> = (0..rows / seq_len).map(|b| b * seq_len).collect();
    g.select_rows(outputs, &idx)
}
