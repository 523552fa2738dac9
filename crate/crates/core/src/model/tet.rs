use std::ops::Range;

use rand::Rng;

use super::{build_plan, BatchPlan, EntityInput, ModelConfig, SequenceBatch, Slot, Source, TokenVocabulary};
use crate::kg::KnowledgeGraph;
use crate::nn::{Graph, Init, ParamId, ParameterStore, Real, Tensor, Var};
use crate::transformer::{cls_of, encode, EncoderConfig, EncoderParams};

/// Longest sequence of each kind the model may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLengths {
    pub local: usize,
    pub global: usize,
    pub context: usize,
    pub enhancement: usize,
}

impl SequenceLengths {
    pub fn for_graph(kg: &KnowledgeGraph, config: &ModelConfig) -> Self {
        let n = kg.neighbors();
        let neighbors = n.max_typeclass_degree() + n.max_relational_degree();
        Self {
            local: 3,
            global: (1 + 2 * neighbors).max(2),
            context: 2 + neighbors,
            enhancement: 1 + 2 * config.rse_type_cap,
        }
    }
}

/// Ids of every trainable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelParams {
    pub word: ParamId,
    pub pos_typeclass: Option<ParamId>,
    pub pos_relational: Option<ParamId>,
    pub pos_global: Option<ParamId>,
    pub pos_context: Option<ParamId>,
    pub pos_enhancement: Option<ParamId>,
    pub local: Option<EncoderParams>,
    pub global: Option<EncoderParams>,
    pub context: Option<EncoderParams>,
    pub enhancement: Option<EncoderParams>,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
}

/// Graph nodes produced by [`TetModel::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Pooled scores, `B x L`.
    pub logits: Var,
    /// Every source score vector, `(total sources) x L`.
    pub source_scores: Var,
    /// Rows of `source_scores` belonging to each entity.
    pub segments: Vec<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TetModel {
    config: ModelConfig,
    tokens: TokenVocabulary,
    num_types: usize,
    lengths: SequenceLengths,
    params: ModelParams,
}

impl TetModel {
    /// Registers all parameters of `config` for `kg` in `store`.
    pub fn new<F: Real, R: Rng + ?Sized>(
        kg: &KnowledgeGraph,
        config: ModelConfig,
        store: &mut ParameterStore<F>,
        rng: &mut R,
    ) -> Result<Self, String> {
        config.validate()?;
        let tokens = TokenVocabulary::for_graph(kg);
        let lengths = SequenceLengths::for_graph(kg, &config);
        let d = config.dim;
        let emb = Init::Normal(1.0 / (d as f64).sqrt());
        let m = config.modules;
        let locals = m.local || m.context;
        let rse = config.rse.reduce().is_some();

        let word = store.register("embeddings.word", vec![tokens.len(), d], emb, rng);
        let mut pos = |on: bool, name: &str, len: usize, rng: &mut R| {
            on.then(|| store.register(format!("embeddings.position.{name}"), vec![len, d], emb, rng))
        };
        let pos_typeclass = pos(locals, "typeclass", lengths.local, rng);
        let pos_relational = pos(locals, "relational", lengths.local, rng);
        let pos_global = pos(m.global, "global", lengths.global, rng);
        let pos_context = pos(m.context, "context", lengths.context, rng);
        let pos_enhancement = pos(rse, "enhancement", lengths.enhancement, rng);

        let mut enc = |on: bool, name: &str, len: usize, rng: &mut R| {
            on.then(|| EncoderParams::register(store, &format!("encoder.{name}"), &config.encoder(len), rng))
        };
        let local = enc(locals, "local", lengths.local, rng);
        let global = enc(m.global, "global", lengths.global, rng);
        let context = enc(m.context, "context", lengths.context, rng);
        let enhancement = enc(rse, "enhancement", lengths.enhancement, rng);

        let head_weight = store.register("head.weight", vec![kg.num_types(), d], Init::XavierUniform, rng);
        let head_bias = store.register("head.bias", vec![kg.num_types()], Init::Zeros, rng);
        Ok(Self {
            config,
            tokens,
            num_types: kg.num_types(),
            lengths,
            params: ModelParams {
                word,
                pos_typeclass,
                pos_relational,
                pos_global,
                pos_context,
                pos_enhancement,
                local,
                global,
                context,
                enhancement,
                head_weight,
                head_bias,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tokens(&self) -> TokenVocabulary {
        self.tokens
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn lengths(&self) -> SequenceLengths {
        self.lengths
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn plan(&self, kg: &KnowledgeGraph, inputs: &[EntityInput]) -> BatchPlan {
        build_plan(kg, self.tokens, inputs, &self.config.plan_options())
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, kg: &KnowledgeGraph, inputs: &[EntityInput]) -> ForwardOutput {
        let plan = self.plan(kg, inputs);
        self.forward_plan(g, &plan)
    }

    fn encoder(&self, len: usize) -> EncoderConfig {
        self.config.encoder(len)
    }

    /// Word (or substituted) embeddings plus position embeddings.
    fn embed<F: Real>(&self, g: &mut Graph<'_, F>, batch: &SequenceBatch, pos: ParamId, extras: Option<Var>) -> Var {
        let token_ids: Vec<usize> = batch
            .slots
            .iter()
            .filter_map(|s| match s {
                Slot::Token(id) => Some(*id),
                _ => None,
            })
            .collect();
        assert!(!token_ids.is_empty(), "every sequence holds at least one token");
        let nt = token_ids.len();
        let words = g.gather(self.params.word, &token_ids);
        let source = match extras {
            Some(x) => g.concat_rows(&[words, x]),
            None => words,
        };
        let mut next = 0;
        let rows: Vec<usize> = batch
            .slots
            .iter()
            .map(|s| match *s {
                Slot::Token(_) => {
                    next += 1;
                    next - 1
                }
                Slot::Pad => 0,
                Slot::LocalOutput(i) | Slot::Enhanced(i) => {
                    assert!(extras.is_some(), "substituted slot without a source");
                    nt + i
                }
            })
            .collect();
        let x = g.select_rows(source, &rows);
        let p = g.gather(pos, &batch.positions);
        g.add(x, p)
    }

    fn run<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        batch: &SequenceBatch,
        pos: Option<ParamId>,
        enc: Option<&EncoderParams>,
        extras: Option<Var>,
        max_len: usize,
    ) -> Var {
        let (pos, enc) = (pos.expect("position table registered"), enc.expect("encoder registered"));
        let x = self.embed(g, batch, pos, extras);
        encode(g, x, batch.seq_len, &batch.mask, &self.encoder(max_len), enc)
    }

    pub fn forward_plan<F: Real>(&self, g: &mut Graph<'_, F>, plan: &BatchPlan) -> ForwardOutput {
        let p = &self.params;
        let d = self.config.dim;

        let enhanced = plan.enhancement.as_ref().map(|enh| {
            let out = self.run(
                g,
                &enh.batch,
                p.pos_enhancement,
                p.enhancement.as_ref(),
                None,
                self.lengths.enhancement,
            );
            let mode = self.config.rse.reduce().expect("enhancement planned only when enabled");
            g.segment_reduce(out, enh.groups.clone(), mode)
        });

        let local_cls = (plan.num_local_sequences() > 0).then(|| {
            let mut parts = Vec::new();
            let mut mask = Vec::new();
            if !plan.typeclass_local.is_empty() {
                parts.push(self.embed(g, &plan.typeclass_local, p.pos_typeclass.unwrap(), None));
                mask.extend_from_slice(&plan.typeclass_local.mask);
            }
            if !plan.relational_local.is_empty() {
                parts.push(self.embed(g, &plan.relational_local, p.pos_relational.unwrap(), enhanced));
                mask.extend_from_slice(&plan.relational_local.mask);
            }
            let x = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
            let enc = self.encoder(self.lengths.local);
            let out = encode(g, x, self.lengths.local, &mask, &enc, p.local.as_ref().unwrap());
            cls_of(g, out, self.lengths.local)
        });

        let global_cls = plan.global.as_ref().map(|b| {
            let out = self.run(g, b, p.pos_global, p.global.as_ref(), enhanced, self.lengths.global);
            cls_of(g, out, b.seq_len)
        });
        let context_cls = plan.context.as_ref().map(|b| {
            let out = self.run(g, b, p.pos_context, p.context.as_ref(), local_cls, self.lengths.context);
            cls_of(g, out, b.seq_len)
        });

        // Stack every available [CLS] matrix and pick rows in pooling order.
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut base = |v: Option<Var>, g: &Graph<'_, F>, blocks: &mut Vec<Var>| {
            v.map(|v| {
                blocks.push(v);
                let at = offset;
                offset += g.value(v).rows();
                at
            })
        };
        let local_base = if self.config.modules.local {
            base(local_cls, g, &mut blocks)
        } else {
            None
        };
        let global_base = base(global_cls, g, &mut blocks);
        let context_base = base(context_cls, g, &mut blocks);
        let needs_zero = plan.sources.iter().flatten().any(|s| *s == Source::BiasOnly);
        let zero_row = needs_zero.then(|| {
            let z = g.constant(Tensor::matrix(1, d, vec![F::zero(); d]));
            base(Some(z), g, &mut blocks).unwrap()
        });
        let num_tc = plan.typeclass_local.num_sequences();
        let mut rows = Vec::new();
        let mut segments = Vec::with_capacity(plan.sources.len());
        for sources in &plan.sources {
            let start = rows.len();
            for s in sources {
                rows.push(match *s {
                    Source::TypeclassLocal(i) => local_base.unwrap() + i,
                    Source::RelationalLocal(j) => local_base.unwrap() + num_tc + j,
                    Source::Global(b) => global_base.unwrap() + b,
                    Source::Context(b) => context_base.unwrap() + b,
                    Source::BiasOnly => zero_row.unwrap(),
                });
            }
            segments.push(start..rows.len());
        }
        let stacked = if blocks.len() == 1 { blocks[0] } else { g.concat_rows(&blocks) };
        let x = g.select_rows(stacked, &rows);
        let source_scores = self.head(g, x);
        let logits = g.segment_pool(source_scores, segments.clone(), F::of(self.config.alpha));
        ForwardOutput {
            logits,
            source_scores,
            segments,
        }
    }

    /// `W . ReLU(x) + b` for every row of `x`.
    pub fn head<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Var {
        let h = g.relu(x);
        let w = g.param(self.params.head_weight);
        let b = g.param(self.params.head_bias);
        let s = g.matmul_t(h, w);
        g.add_row(s, b)
    }
}
