use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::Hasher;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParameterStore, Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row-set reductions for [`Graph::segment_reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Mean,
    Max,
    Min,
}

enum Op<F> {
    Constant,
    Param(ParamId),
    Gather {
        table: ParamId,
        rows: Vec<usize>,
    },
    SelectRows {
        src: Var,
        rows: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<F>),
    Affine(Var, F),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Ln(Var),
    Clamp(Var, F, F),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Dropout(Var, Vec<F>),
    Sum(Var),
    Mean(Var),
    SegmentReduce {
        src: Var,
        segments: Vec<Vec<usize>>,
        kind: Reduce,
        // Max/Min: source row chosen for every output element.
        picks: Vec<usize>,
    },
    SegmentPool {
        src: Var,
        segments: Vec<Range<usize>>,
        alpha: F,
        weights: Vec<F>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        mask: Vec<bool>,
        probs: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    per_param: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn empty(num_params: usize) -> Self {
        Self {
            per_param: vec![None; num_params],
        }
    }

    /// `None` when the parameter did not influence the loss.
    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.per_param.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient with unused parameters reported as zeros.
    pub fn dense(&self, id: ParamId, store: &ParameterStore<F>) -> Vec<F> {
        self.get(id)
            .map(<[F]>::to_vec)
            .unwrap_or_else(|| vec![F::zero(); store.get(id).len()])
    }

    /// Overwrites the gradient of one parameter.
    pub fn set(&mut self, id: ParamId, grad: Vec<F>) {
        self.per_param[id.0] = Some(grad);
    }

    pub fn num_params(&self) -> usize {
        self.per_param.len()
    }

    pub fn accumulate(&mut self, other: &Gradients<F>) {
        assert_eq!(self.per_param.len(), other.per_param.len());
        for (mine, theirs) in self.per_param.iter_mut().zip(&other.per_param) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.iter_mut().zip(t).for_each(|(a, &b)| *a = *a + b),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in self.per_param.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = *x * s);
        }
    }

    pub fn global_norm(&self) -> F {
        self.per_param
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|&x| x * x)
            .sum::<F>()
            .sqrt()
    }
}

/// An eagerly evaluated computation tape over a borrowed parameter store.
///
/// Shape mismatches are contract violations and panic.
pub struct Graph<'s, F: Real> {
    store: &'s ParameterStore<F>,
    nodes: Vec<Node<F>>,
    param_vars: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
    kinks: Option<DefaultHasher>,
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

impl<'s, F: Real> Graph<'s, F> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(store: &'s ParameterStore<F>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            dropout_rng: None,
            kinks: None,
        }
    }

    /// Training-mode graph; dropout masks are drawn from a generator seeded
    /// with `seed`.
    pub fn training(store: &'s ParameterStore<F>, seed: u64) -> Self {
        Self {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new(store)
        }
    }

    /// Records which side of every non-smooth point (ReLU, clamp, max/min)
    /// the forward pass took; see [`Graph::kink_signature`].
    pub fn with_kink_tracking(mut self) -> Self {
        self.kinks = Some(DefaultHasher::new());
        self
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn store(&self) -> &'s ParameterStore<F> {
        self.store
    }

    /// Hash of all branch decisions taken so far (0 when tracking is off).
    pub fn kink_signature(&self) -> u64 {
        self.kinks.as_ref().map_or(0, |h| h.finish())
    }

    /// Feeds externally made branch decisions into the kink signature.
    pub fn note_branches(&mut self, bits: impl IntoIterator<Item = bool>) {
        if let Some(h) = self.kinks.as_mut() {
            for b in bits {
                h.write_u8(b as u8);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn unary(&mut self, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&a| f(a)).collect();
        let value = Tensor::new(t.shape().to_vec(), data);
        let ng = self.ng(x);
        self.push(value, op, ng)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// The whole parameter tensor as a differentiable leaf (cached per id).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = self.push(value, Op::Param(id), true);
        self.param_vars.insert(id, v);
        v
    }

    /// Embedding lookup: rows of a 2-D parameter table.
    pub fn gather(&mut self, table: ParamId, rows: &[usize]) -> Var {
        let t = self.store.get(table);
        let c = t.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            assert!(r < t.rows(), "gather row {r} out of range");
            data.extend_from_slice(t.row(r));
        }
        self.push(
            Tensor::matrix(rows.len(), c, data),
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            true,
        )
    }

    /// Picks (possibly repeated) rows of `src`.
    pub fn select_rows(&mut self, src: Var, rows: &[usize]) -> Var {
        let t = self.value(src);
        let c = t.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            assert!(r < t.rows(), "select row {r} out of range");
            data.extend_from_slice(t.row(r));
        }
        let ng = self.ng(src);
        self.push(
            Tensor::matrix(rows.len(), c, data),
            Op::SelectRows {
                src,
                rows: rows.to_vec(),
            },
            ng,
        )
    }

    pub fn slice_rows(&mut self, src: Var, range: Range<usize>) -> Var {
        let rows: Vec<usize> = range.collect();
        self.select_rows(src, &rows)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), c, "concat_rows column mismatch");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(rows, c, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "add shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// `x (n x c) + row (c)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (tx, tr) = (self.value(x), self.value(row));
        let c = tx.cols();
        assert_eq!(tr.len(), c, "add_row width mismatch");
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tr.data()[i % c])
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data);
        let ng = self.ng(x) || self.ng(row);
        self.push(value, Op::AddRow(x, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "mul shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Elementwise product with a constant tensor (no gradient to `c`).
    pub fn mul_const(&mut self, x: Var, c: Vec<F>) -> Var {
        let tx = self.value(x);
        assert_eq!(tx.len(), c.len(), "mul_const shape mismatch");
        let data = tx.data().iter().zip(&c).map(|(&a, &b)| a * b).collect();
        let value = Tensor::new(tx.shape().to_vec(), data);
        let ng = self.ng(x);
        self.push(value, Op::MulConst(x, c), ng)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: F, shift: F) -> Var {
        self.unary(x, |a| scale * a + shift, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        self.affine(x, s, F::zero())
    }

    /// `a (n x k) . b (k x m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![F::zero(); n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == F::zero() {
                    continue;
                }
                for (o, &bv) in orow.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                    *o = *o + av * bv;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(n, m, out), Op::MatMul(a, b), ng)
    }

    /// `a (n x k) . b^T` with `b (m x k)`; the natural form for a
    /// `(out x in)` weight matrix.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims(a);
        let (m, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_t inner dimension mismatch");
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![F::zero(); n * m];
        for i in 0..n {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..m {
                let br = &bd[j * k..(j + 1) * k];
                out[i * m + j] = ar.iter().zip(br).fold(F::zero(), |s, (&x, &y)| s + x * y);
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(n, m, out), Op::MatMulT(a, b), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        if let Some(h) = self.kinks.as_mut() {
            for &a in self.nodes[x.0].value.data() {
                h.write_u8((a > F::zero()) as u8);
            }
        }
        self.unary(x, |a| if a > F::zero() { a } else { F::zero() }, Op::Relu(x))
    }

    /// tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = F::of((2.0 / std::f64::consts::PI).sqrt());
        let k = F::of(0.044715);
        let half = F::of(0.5);
        self.unary(
            x,
            |a| half * a * (F::one() + (c * (a + k * a * a * a)).tanh()),
            Op::Gelu(x),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.ln(), Op::Ln(x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Var {
        if let Some(h) = self.kinks.as_mut() {
            for &a in self.nodes[x.0].value.data() {
                h.write_u8(if a < lo { 0 } else if a > hi { 2 } else { 1 });
            }
        }
        self.unary(x, |a| a.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            softmax_into(t.row(r), &mut out);
        }
        debug_assert_eq!(out.len(), t.len());
        let value = Tensor::new(t.shape().to_vec(), out);
        let _ = c;
        let ng = self.ng(x);
        self.push(value, Op::Softmax(x), ng)
    }

    /// Per-row normalisation to zero mean / unit variance followed by
    /// `gain * xhat + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Var {
        let (n, d) = self.dims(x);
        assert_eq!(self.value(gain).len(), d, "layer_norm gain width");
        assert_eq!(self.value(bias).len(), d, "layer_norm bias width");
        let xd = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let df = F::of(d as f64);
        let mut xhat = Vec::with_capacity(n * d);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            Tensor::new(self.value(x).shape().to_vec(), out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Inverted dropout; identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability {p} outside [0, 1)");
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        if p == 0.0 {
            return x;
        }
        let keep = F::of(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.len();
        let mask: Vec<F> = (0..n)
            .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data);
        let ng = self.ng(x);
        self.push(value, Op::Dropout(x, mask), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<F>();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<F>() / F::of(t.len() as f64);
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// One output row per segment: the elementwise mean / max / min over the
    /// listed source rows.
    pub fn segment_reduce(&mut self, src: Var, segments: Vec<Vec<usize>>, kind: Reduce) -> Var {
        let t = self.value(src);
        let c = t.cols();
        let mut out = Vec::with_capacity(segments.len() * c);
        let mut picks = Vec::new();
        for seg in &segments {
            assert!(!seg.is_empty(), "empty segment");
            match kind {
                Reduce::Mean => {
                    let inv = F::one() / F::of(seg.len() as f64);
                    for j in 0..c {
                        out.push(seg.iter().map(|&r| t.row(r)[j]).sum::<F>() * inv);
                    }
                }
                Reduce::Max | Reduce::Min => {
                    for j in 0..c {
                        let mut best = seg[0];
                        for &r in &seg[1..] {
                            let (cand, cur) = (t.row(r)[j], t.row(best)[j]);
                            let better = if kind == Reduce::Max { cand > cur } else { cand < cur };
                            if better {
                                best = r;
                            }
                        }
                        picks.push(best);
                        out.push(t.row(best)[j]);
                    }
                }
            }
        }
        if let Some(h) = self.kinks.as_mut() {
            for &p in &picks {
                h.write_usize(p);
            }
        }
        let ng = self.ng(src);
        let rows = segments.len();
        self.push(
            Tensor::matrix(rows, c, out),
            Op::SegmentReduce {
                src,
                segments,
                kind,
                picks,
            },
            ng,
        )
    }

    /// Exponentially weighted pooling over contiguous row segments: for each
    /// segment and column `k`, `sum_i w_i S_ik` with
    /// `w = softmax_i(alpha * S_ik)`.
    pub fn segment_pool(&mut self, src: Var, segments: Vec<Range<usize>>, alpha: F) -> Var {
        let t = self.value(src);
        let c = t.cols();
        let mut weights = vec![F::zero(); t.len()];
        let mut out = Vec::with_capacity(segments.len() * c);
        let mut buf = Vec::new();
        let mut w = Vec::new();
        for seg in &segments {
            assert!(!seg.is_empty(), "pooling needs at least one source");
            for k in 0..c {
                buf.clear();
                buf.extend(seg.clone().map(|r| alpha * t.row(r)[k]));
                w.clear();
                softmax_into(&buf, &mut w);
                let mut acc = F::zero();
                for (wi, r) in w.iter().zip(seg.clone()) {
                    weights[r * c + k] = *wi;
                    acc = acc + *wi * t.row(r)[k];
                }
                out.push(acc);
            }
        }
        let ng = self.ng(src);
        let rows = segments.len();
        self.push(
            Tensor::matrix(rows, c, out),
            Op::SegmentPool {
                src,
                segments,
                alpha,
                weights,
            },
            ng,
        )
    }

    /// Multi-head scaled dot-product attention over `B` packed sequences of
    /// length `seq_len` (`q`, `k`, `v` are `(B * seq_len) x d`).
    ///
    /// `mask[i]` marks real tokens. Padded keys get zero weight and padded
    /// queries produce zero output.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq_len: usize, heads: usize, mask: &[bool]) -> Var {
        let (n, d) = self.dims(q);
        assert!(seq_len > 0, "attention over empty sequences");
        assert_eq!(n % seq_len, 0, "rows not a multiple of seq_len");
        assert_eq!(self.dims(k), (n, d), "key shape");
        assert_eq!(self.dims(v), (n, d), "value shape");
        assert_eq!(mask.len(), n, "mask length");
        assert_eq!(d % heads, 0, "model dim not divisible by heads");
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let dh = d / heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let t = seq_len;
        let batch = n / t;
        let mut probs = vec![F::zero(); batch * heads * t * t];
        let mut out = vec![F::zero(); n * d];
        let mut logits = Vec::with_capacity(t);
        let mut p = Vec::with_capacity(t);
        for b in 0..batch {
            let base = b * t;
            let real: Vec<usize> = (0..t).filter(|&j| mask[base + j]).collect();
            for h in 0..heads {
                let off = h * dh;
                for i in 0..t {
                    if !mask[base + i] {
                        continue;
                    }
                    let qi = &qd[(base + i) * d + off..(base + i) * d + off + dh];
                    logits.clear();
                    for &j in &real {
                        let kj = &kd[(base + j) * d + off..(base + j) * d + off + dh];
                        let s = qi.iter().zip(kj).fold(F::zero(), |s, (&a, &b)| s + a * b);
                        logits.push(s * scale);
                    }
                    p.clear();
                    softmax_into(&logits, &mut p);
                    let prow = ((b * heads + h) * t + i) * t;
                    let orow = &mut out[(base + i) * d + off..(base + i) * d + off + dh];
                    for (&pj, &j) in p.iter().zip(&real) {
                        probs[prow + j] = pj;
                        let vj = &vd[(base + j) * d + off..(base + j) * d + off + dh];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o = *o + pj * vv;
                        }
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            Tensor::matrix(n, d, out),
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                mask: mask.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Reverse pass from a scalar `loss`. Panics if `loss` is not a scalar.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.value(loss).len(), 1, "backward requires a scalar loss");
        let mut param_grads: Vec<Option<Vec<F>>> = vec![None; self.store.len()];
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop(node, &g, &mut grads, &mut param_grads);
        }
        Gradients {
            per_param: param_grads,
        }
    }

    fn backprop(
        &self,
        node: &Node<F>,
        g: &[F],
        grads: &mut [Option<Vec<F>>],
        param_grads: &mut [Option<Vec<F>>],
    ) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                let len = g.len();
                add_into(param_grads[id.0].get_or_insert_with(|| vec![F::zero(); len]), g);
            }
            Op::Gather { table, rows } => {
                let t = self.store.get(*table);
                let c = t.cols();
                let pg = param_grads[table.0].get_or_insert_with(|| vec![F::zero(); t.len()]);
                for (i, &r) in rows.iter().enumerate() {
                    add_into(&mut pg[r * c..(r + 1) * c], &g[i * c..(i + 1) * c]);
                }
            }
            Op::SelectRows { src, rows } => {
                let c = nodes[src.0].value.cols();
                if let Some(s) = slot(nodes, grads, *src) {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut s[r * c..(r + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(s) = slot(nodes, grads, p) {
                        add_into(s, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::Add(a, b) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    add_into(s, g);
                }
                if let Some(s) = slot(nodes, grads, *b) {
                    add_into(s, g);
                }
            }
            Op::AddRow(x, row) => {
                if let Some(s) = slot(nodes, grads, *x) {
                    add_into(s, g);
                }
                let c = nodes[row.0].value.len();
                if let Some(s) = slot(nodes, grads, *row) {
                    for (i, &gi) in g.iter().enumerate() {
                        s[i % c] = s[i % c] + gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(s) = slot(nodes, grads, *a) {
                    for i in 0..g.len() {
                        s[i] = s[i] + g[i] * bv[i];
                    }
                }
                if let Some(s) = slot(nodes, grads, *b) {
                    for i in 0..g.len() {
                        s[i] = s[i] + g[i] * av[i];
                    }
                }
            }
            Op::MulConst(x, c) => {
                if let Some(s) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        s[i] = s[i] + g[i] * c[i];
                    }
                }
            }
            Op::Affine(x, scale) => {
                if let Some(s) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        s[i] = s[i] + g[i] * *scale;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let m = nodes[b.0].value.cols();
                let (av, bv) = (val(*a), val(*b));
                if let Some(s) = slot(nodes, grads, *a) {
                    // dA = G . B^T
                    for i in 0..n {
                        let gr = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let br = &bv[p * m..(p + 1) * m];
                            let acc = gr.iter().zip(br).fold(F::zero(), |s, (&x, &y)| s + x * y);
                            s[i * k + p] = s[i * k + p] + acc;
                        }
                    }
                }
                if let Some(s) = slot(nodes, grads, *b) {
                    // dB = A^T . G
                    for i in 0..n {
                        let gr = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == F::zero() {
                                continue;
                            }
                            for (d, &gv) in s[p * m..(p + 1) * m].iter_mut().zip(gr) {
                                *d = *d + a_ip * gv;
                            }
                        }
                    }
                }
            }
            Op::MatMulT(a, b) => {
                let (n, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let m = nodes[b.0].value.rows();
                let (av, bv) = (val(*a), val(*b));
                if let Some(s) = slot(nodes, grads, *a) {
                    // dA = G . B
                    for i in 0..n {
                        let sr = &mut s[i * k..(i + 1) * k];
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == F::zero() {
                                continue;
                            }
                            for (d, &bv) in sr.iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                                *d = *d + gij * bv;
                            }
                        }
                    }
                }
                if let Some(s) = slot(nodes, grads, *b) {
                    // dB = G^T . A
                    for i in 0..n {
                        let ar = &av[i * k..(i + 1) * k];
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == F::zero() {
                                continue;
                            }
                            for (d, &a) in s[j * k..(j + 1) * k].iter_mut().zip(ar) {
                                *d = *d + gij * a;
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = val(*x);
                if let Some(s) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        if xv[i] > F::zero() {
                            s[i] = s[i] + g[i];
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                let c = F::of((2.0 / std::f64::consts::PI).sqrt());
                let k = F::of(0.044715);
                let half = F::of(0.5);
                let three = F::of(3.0);
                if let Some(s) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        let a = xv[i];
                        let th = (c * (a + k * a * a * a)).tanh();
                        let d = half * (F::one() + th)
                            + half * a * (F::one() - th * th) * c * (F::one() + three * k * a * a);
                        s[i] = s[i] + g[i] * d;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(s) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        s[i] = s[i] + g[i] * y[i] * (F::one() - y[i]);
                    }
                }
            }
            Op::Ln(x) => {
                let xv = val(*x);
                if let Some(s) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        s[i] = s[i] + g[i] / xv[i];
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = val(*x);
                if let Some(s) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            s[i] = s[i] + g[i];
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols();
                if let Some(s) = slot(nodes, grads, *x) {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot = yr.iter().zip(gr).fold(F::zero(), |a, (&p, &q)| a + p * q);
                        for j in 0..c {
                            s[r * c + j] = s[r * c + j] + yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = nodes[x.0].value.cols();
                let n = nodes[x.0].value.rows();
                let gv = val(*gain);
                if let Some(s) = slot(nodes, grads, *gain) {
                    for i in 0..g.len() {
                        s[i % d] = s[i % d] + g[i] * xhat[i];
                    }
                }
                if let Some(s) = slot(nodes, grads, *bias) {
                    for i in 0..g.len() {
                        s[i % d] = s[i % d] + g[i];
                    }
                }
                if let Some(s) = slot(nodes, grads, *x) {
                    let df = F::of(d as f64);
                    let mut dxh = vec![F::zero(); d];
                    for r in 0..n {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxh[j] = gr[j] * gv[j];
                        }
                        let sum: F = dxh.iter().copied().sum();
                        let dot = dxh.iter().zip(xr).fold(F::zero(), |a, (&p, &q)| a + p * q);
                        let k = inv_std[r] / df;
                        for j in 0..d {
                            s[r * d + j] = s[r * d + j] + k * (df * dxh[j] - sum - xr[j] * dot);
                        }
                    }
                }
            }
            Op::Dropout(x, mask) => {
                if let Some(s) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        s[i] = s[i] + g[i] * mask[i];
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(s) = slot(nodes, grads, *x) {
                    s.iter_mut().for_each(|v| *v = *v + g[0]);
                }
            }
            Op::Mean(x) => {
                let n = F::of(nodes[x.0].value.len() as f64);
                if let Some(s) = slot(nodes, grads, *x) {
                    s.iter_mut().for_each(|v| *v = *v + g[0] / n);
                }
            }
            Op::SegmentReduce {
                src,
                segments,
                kind,
                picks,
            } => {
                let c = nodes[src.0].value.cols();
                if let Some(s) = slot(nodes, grads, *src) {
                    for (si, seg) in segments.iter().enumerate() {
                        for j in 0..c {
                            let gv = g[si * c + j];
                            match kind {
                                Reduce::Mean => {
                                    let share = gv / F::of(seg.len() as f64);
                                    for &r in seg {
                                        s[r * c + j] = s[r * c + j] + share;
                                    }
                                }
                                Reduce::Max | Reduce::Min => {
                                    let r = picks[si * c + j];
                                    s[r * c + j] = s[r * c + j] + gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::SegmentPool {
                src,
                segments,
                alpha,
                weights,
            } => {
                let sv = &nodes[src.0].value;
                let c = sv.cols();
                let out = node.value.data();
                if let Some(s) = slot(nodes, grads, *src) {
                    // dS_ik = g_k * w_ik * (1 + alpha * (S_ik - pooled_k))
                    for (si, seg) in segments.iter().enumerate() {
                        for k in 0..c {
                            let gv = g[si * c + k];
                            let pooled = out[si * c + k];
                            for r in seg.clone() {
                                let w = weights[r * c + k];
                                let x = sv.data()[r * c + k];
                                s[r * c + k] =
                                    s[r * c + k] + gv * w * (F::one() + *alpha * (x - pooled));
                            }
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                mask,
                probs,
            } => self.attention_backward(g, *q, *k, *v, *seq_len, *heads, mask, probs, grads),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[F],
        q: Var,
        k: Var,
        v: Var,
        t: usize,
        heads: usize,
        mask: &[bool],
        probs: &[F],
        grads: &mut [Option<Vec<F>>],
    ) {
        let (n, d) = self.dims(q);
        let dh = d / heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![F::zero(); n * d];
        let mut dk = vec![F::zero(); n * d];
        let mut dv = vec![F::zero(); n * d];
        let mut dp = vec![F::zero(); t];
        for b in 0..n / t {
            let base = b * t;
            let real: Vec<usize> = (0..t).filter(|&j| mask[base + j]).collect();
            for h in 0..heads {
                let off = h * dh;
                for &i in &real {
                    let prow = &probs[((b * heads + h) * t + i) * t..((b * heads + h) * t + i + 1) * t];
                    let gi = &g[(base + i) * d + off..(base + i) * d + off + dh];
                    let mut dot = F::zero();
                    for &j in &real {
                        let vj = &vd[(base + j) * d + off..(base + j) * d + off + dh];
                        dp[j] = gi.iter().zip(vj).fold(F::zero(), |s, (&a, &b)| s + a * b);
                        dot = dot + dp[j] * prow[j];
                        let pj = prow[j];
                        for (dvv, &gg) in dv[(base + j) * d + off..(base + j) * d + off + dh]
                            .iter_mut()
                            .zip(gi)
                        {
                            *dvv = *dvv + pj * gg;
                        }
                    }
                    for &j in &real {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        if ds == F::zero() {
                            continue;
                        }
                        for c in 0..dh {
                            let (ri, rj) = ((base + i) * d + off + c, (base + j) * d + off + c);
                            dq[ri] = dq[ri] + ds * kd[rj];
                            dk[rj] = dk[rj] + ds * qd[ri];
                        }
                    }
                }
            }
        }
        for (var, delta) in [(q, dq), (k, dk), (v, dv)] {
            if self.nodes[var.0].needs_grad {
                let s = grads[var.0].get_or_insert_with(|| vec![F::zero(); n * d]);
                add_into(s, &delta);
            }
        }
    }
}

fn slot<'g, F: Real>(nodes: &[Node<F>], grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); len]))
}

pub(crate) fn sigmoid<F: Real>(a: F) -> F {
    if a >= F::zero() {
        F::one() / (F::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (F::one() + e)
    }
}

/// Appends `softmax(xs)` to `out` using max subtraction.
pub(crate) fn softmax_into<F: Real>(xs: &[F], out: &mut Vec<F>) {
    let m = xs.iter().copied().fold(F::neg_infinity(), F::max);
    let start = out.len();
    let mut z = F::zero();
    for &x in xs {
        let e = (x - m).exp();
        z = z + e;
        out.push(e);
    }
    for e in &mut out[start..] {
        *e = *e / z;
    }
}
