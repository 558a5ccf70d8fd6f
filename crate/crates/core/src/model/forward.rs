//! Differentiable forward passes on the autodiff graph.
//!
//! Everything here operates on one composed row at a time; batching is a
//! loop at the call site. The content stream carries token states under the
//! content mask; the query stream starts from a learned seed vector and, at
//! every layer, attends over the previous layer's content states under the
//! query mask, so a slot's prediction never touches its own token.

use std::rc::Rc;

use super::config::ModelConfig;
use super::params::Params;
use crate::encoding::{ComposedRow, CLS};
use crate::error::{Error, Result};
use crate::numerics::{real, Graph, Scalar, SeedRng, Tensor, Var};
use crate::positional::{OffsetMatrix, SinusoidTable, SpanLayout};
use rand::Rng;

/// Precomputed attention geometry for one row: the sinusoid rows actually
/// referenced, per-pair indices into them, and both stream masks.
pub struct RowGeometry<F: Scalar> {
    pub len: usize,
    pub r_used: Tensor<F>,
    pub idx: Rc<Vec<usize>>,
    pub content_mask: Rc<Vec<bool>>,
    pub query_mask: Rc<Vec<bool>>,
}

impl<F: Scalar> RowGeometry<F> {
    /// Geometry for a composed row: collapsed offsets normally, raw offsets
    /// in left-to-right mode.
    pub fn for_layout(layout: SpanLayout, l2r: bool, sinusoid: &SinusoidTable<F>) -> Self {
        let matrix = if l2r {
            OffsetMatrix::raw(layout)
        } else {
            OffsetMatrix::insertion(layout)
        };
        Self::from_matrix(&matrix, sinusoid)
    }

    /// Geometry for the spanless bidirectional encode.
    pub fn full(len: usize, sinusoid: &SinusoidTable<F>) -> Self {
        Self::from_matrix(&OffsetMatrix::full(len), sinusoid)
    }

    pub fn from_matrix(matrix: &OffsetMatrix, sinusoid: &SinusoidTable<F>) -> Self {
        let n = matrix.len();
        let d = sinusoid.table().cols();
        let mut rows: Vec<usize> = Vec::new();
        let mut idx = vec![0usize; n * n];
        for i in 0..n {
            for j in 0..n {
                if !matrix.legal(i, j) {
                    continue;
                }
                let row = sinusoid.row_index(matrix.offset(i, j));
                let slot = match rows.iter().position(|&r| r == row) {
                    Some(s) => s,
                    None => {
                        rows.push(row);
                        rows.len() - 1
                    }
                };
                idx[i * n + j] = slot;
            }
        }
        if rows.is_empty() {
            rows.push(sinusoid.row_index(0));
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            data.extend_from_slice(sinusoid.table().row(r));
        }
        RowGeometry {
            len: n,
            r_used: Tensor::new(vec![rows.len(), d], data).expect("table slice"),
            idx: Rc::new(idx),
            content_mask: Rc::new(matrix.content_mask()),
            query_mask: Rc::new(matrix.query_mask()),
        }
    }
}

/// Graph leaves for every parameter tensor, in canonical order.
pub struct ParamVars {
    pub embed: Var,
    pub q_init: Var,
    pub u: Var,
    pub v: Var,
    pub cls_w: Var,
    pub cls_b: Var,
    pub layers: Vec<LayerVars>,
}

pub struct LayerVars {
    pub wq: Var,
    pub wke: Var,
    pub wkr: Var,
    pub wv: Var,
    pub wo: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
}

impl ParamVars {
    pub fn new<F: Scalar>(g: &Graph<F>, params: &Params<F>, trainable: bool) -> Self {
        let leaf = |t: &Tensor<F>| g.leaf(t.clone(), trainable);
        ParamVars {
            embed: leaf(&params.embed),
            q_init: leaf(&params.q_init),
            u: leaf(&params.u),
            v: leaf(&params.v),
            cls_w: leaf(&params.cls_w),
            cls_b: leaf(&params.cls_b),
            layers: params
                .layers
                .iter()
                .map(|l| LayerVars {
                    wq: leaf(&l.wq),
                    wke: leaf(&l.wke),
                    wkr: leaf(&l.wkr),
                    wv: leaf(&l.wv),
                    wo: leaf(&l.wo),
                    ffn_w1: leaf(&l.ffn_w1),
                    ffn_b1: leaf(&l.ffn_b1),
                    ffn_w2: leaf(&l.ffn_w2),
                    ffn_b2: leaf(&l.ffn_b2),
                    ln1_g: leaf(&l.ln1_g),
                    ln1_b: leaf(&l.ln1_b),
                    ln2_g: leaf(&l.ln2_g),
                    ln2_b: leaf(&l.ln2_b),
                })
                .collect(),
        }
    }

    /// Leaves in the same order as [`Params::named_tensors`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.embed, self.q_init, self.u, self.v, self.cls_w, self.cls_b];
        for l in &self.layers {
            out.extend([
                l.wq, l.wke, l.wkr, l.wv, l.wo, l.ffn_w1, l.ffn_b1, l.ffn_w2, l.ffn_b2,
                l.ln1_g, l.ln1_b, l.ln2_g, l.ln2_b,
            ]);
        }
        out
    }
}

/// Pre-sampled inverted-dropout masks: two per stream per layer (attention
/// output, feed-forward output). [`DropoutPlan::none`] disables dropout, as
/// at inference and under finite-difference checks.
pub struct DropoutPlan<F: Scalar> {
    masks: Vec<Rc<Vec<F>>>,
}

impl<F: Scalar> DropoutPlan<F> {
    pub fn none() -> Self {
        DropoutPlan { masks: Vec::new() }
    }

    pub fn sample(rate: f64, n_layers: usize, len: usize, d_model: usize, rng: &mut SeedRng) -> Self {
        if rate == 0.0 {
            return Self::none();
        }
        let keep = real::<F>(1.0 / (1.0 - rate));
        let masks = (0..4 * n_layers)
            .map(|_| {
                Rc::new(
                    (0..len * d_model)
                        .map(|_| if rng.gen_range(0.0..1.0) < rate { F::zero() } else { keep })
                        .collect::<Vec<F>>(),
                )
            })
            .collect();
        DropoutPlan { masks }
    }

    fn apply(&self, g: &Graph<F>, x: Var, layer: usize, site: usize) -> Var {
        match self.masks.get(4 * layer + site) {
            Some(m) => g.mul_mask(x, m.clone()),
            None => x,
        }
    }
}

fn attention<F: Scalar>(
    g: &Graph<F>,
    q_states: Var,
    kv_states: Var,
    geo: &RowGeometry<F>,
    lv: &LayerVars,
    pv: &ParamVars,
    n_heads: usize,
    mask: &Rc<Vec<bool>>,
) -> Var {
    let d = g.shape(q_states)[1];
    let dh = d / n_heads;
    let scale = real::<F>(1.0 / (dh as f64).sqrt());

    let q = g.matmul(q_states, lv.wq);
    let k = g.matmul(kv_states, lv.wke);
    let val = g.matmul(kv_states, lv.wv);
    let kr = g.matmul(g.constant(geo.r_used.clone()), lv.wkr);
    let qu = g.add_row(q, pv.u);
    let qv = g.add_row(q, pv.v);

    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = |x: Var| g.slice_cols(x, h * dh, dh);
        let content = g.matmul_tb(cols(qu), cols(k));
        let rel_all = g.matmul_tb(cols(qv), cols(kr));
        let rel = g.gather_per_row(rel_all, geo.idx.clone(), geo.len);
        let scores = g.scale(g.add(content, rel), scale);
        let probs = g.softmax_rows(scores, Some(mask.clone()));
        heads.push(g.matmul(probs, cols(val)));
    }
    g.matmul(g.concat_cols(&heads), lv.wo)
}

fn block<F: Scalar>(
    g: &Graph<F>,
    stream_in: Var,
    kv_states: Var,
    geo: &RowGeometry<F>,
    lv: &LayerVars,
    pv: &ParamVars,
    n_heads: usize,
    mask: &Rc<Vec<bool>>,
    dropout: &DropoutPlan<F>,
    layer: usize,
    site_base: usize,
) -> Var {
    let attn = attention(g, stream_in, kv_states, geo, lv, pv, n_heads, mask);
    let attn = dropout.apply(g, attn, layer, site_base);
    let x = g.layer_norm(g.add(stream_in, attn), lv.ln1_g, lv.ln1_b);
    let inner = g.relu(g.add_row(g.matmul(x, lv.ffn_w1), lv.ffn_b1));
    let ffn = g.add_row(g.matmul(inner, lv.ffn_w2), lv.ffn_b2);
    let ffn = dropout.apply(g, ffn, layer, site_base + 1);
    g.layer_norm(g.add(x, ffn), lv.ln2_g, lv.ln2_b)
}

fn ids_as_indices(ids: &[u32]) -> Rc<Vec<usize>> {
    Rc::new(ids.iter().map(|&t| t as usize).collect())
}

/// Runs both streams over one composed row and returns the top-layer states
/// `(content, query)`.
fn two_stream<F: Scalar>(
    g: &Graph<F>,
    pv: &ParamVars,
    config: &ModelConfig,
    geo: &RowGeometry<F>,
    ids: &[u32],
    dropout: &DropoutPlan<F>,
) -> (Var, Var) {
    let mut h = g.gather_rows(pv.embed, ids_as_indices(ids));
    let mut q = g.broadcast_row(pv.q_init, ids.len());
    for (l, lv) in pv.layers.iter().enumerate() {
        let h_next = block(g, h, h, geo, lv, pv, config.n_heads, &geo.content_mask, dropout, l, 0);
        let q_next = block(g, q, h, geo, lv, pv, config.n_heads, &geo.query_mask, dropout, l, 2);
        h = h_next;
        q = q_next;
    }
    (h, q)
}

/// Log-probabilities over the vocabulary at every span slot of a composed
/// row, paired with the tokens those slots should predict (the span tokens,
/// then the end-of-insertion marker when the row carries one).
pub fn span_log_probs<F: Scalar>(
    g: &Graph<F>,
    pv: &ParamVars,
    config: &ModelConfig,
    sinusoid: &SinusoidTable<F>,
    row: &ComposedRow,
    dropout: &DropoutPlan<F>,
) -> Result<(Var, Vec<usize>)> {
    for &t in &row.ids {
        if t as usize >= config.vocab_size {
            return Err(Error::OutOfVocab(format!(
                "token id {t} outside vocabulary of {}",
                config.vocab_size
            )));
        }
    }
    let geo = RowGeometry::for_layout(row.layout, config.l2r, sinusoid);
    let (_, q_top) = two_stream(g, pv, config, &geo, &row.ids, dropout);
    let (a, b) = (row.layout.a, row.layout.b);
    let preds = g.slice_rows(q_top, a, b - a + 1);
    let logits = g.matmul_tb(preds, pv.embed);
    let lp = g.log_softmax_rows(logits);
    let targets = row.ids[a..=b].iter().map(|&t| t as usize).collect();
    Ok((lp, targets))
}

/// Log-probabilities over styles for a document: a plain bidirectional
/// encode of `x ⊕ CLS`, with the classifier head on the top CLS state.
pub fn classify_log_probs<F: Scalar>(
    g: &Graph<F>,
    pv: &ParamVars,
    config: &ModelConfig,
    sinusoid: &SinusoidTable<F>,
    x: &[u32],
    dropout: &DropoutPlan<F>,
) -> Result<Var> {
    if config.num_styles == 0 {
        return Err(Error::Contract("model has no style classes".into()));
    }
    if x.is_empty() {
        return Err(Error::Contract("cannot classify an empty sequence".into()));
    }
    let mut ids = x.to_vec();
    ids.push(CLS);
    let geo = RowGeometry::full(ids.len(), sinusoid);
    let mut h = g.gather_rows(pv.embed, ids_as_indices(&ids));
    for (l, lv) in pv.layers.iter().enumerate() {
        h = block(g, h, h, &geo, lv, pv, config.n_heads, &geo.content_mask, dropout, l, 0);
    }
    let cls = g.slice_rows(h, ids.len() - 1, 1);
    let logits = g.add_row(g.matmul(cls, pv.cls_w), pv.cls_b);
    Ok(g.log_softmax_rows(logits))
}
