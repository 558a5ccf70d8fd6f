//! Plain-tensor inference: cached context encoding, incremental span
//! decoding, and style classification.
//!
//! This route is written independently of the autodiff graph and is held
//! equal to it by tests. Context content states are computed once per
//! (left, right, style) triple: context positions only ever attend to one
//! another, and their pairwise offsets do not involve the span, so the same
//! cache serves any number of candidate insertions. Span states are then
//! appended one token at a time.

use std::cell::RefCell;
use std::rc::Rc;

use super::config::ModelConfig;
use super::params::{LayerParams, Params};
use crate::encoding::{CLS, EOI};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_tb, real, Scalar, SeedRng, Tensor};
use crate::positional::SinusoidTable;
use rand::Rng;

fn matvec<F: Scalar>(x: &[F], w: &Tensor<F>) -> Vec<F> {
    matmul(x, w.data(), 1, w.rows(), w.cols())
}

fn add_vec<F: Scalar>(a: &[F], b: &[F]) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn layer_norm_row<F: Scalar>(x: &[F], gamma: &[F], beta: &[F]) -> Vec<F> {
    let n = real::<F>(x.len() as f64);
    let mean = x.iter().copied().sum::<F>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let rstd = F::one() / (var + real(1e-5)).sqrt();
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&v, (&g, &b))| (v - mean) * rstd * g + b)
        .collect()
}

fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        for v in row.iter_mut() {
            *v = F::zero();
        }
        return;
    }
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn log_softmax<F: Scalar>(row: &[F]) -> Vec<F> {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let total: F = row.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + total.ln();
    row.iter().map(|&v| v - lse).collect()
}

/// Per-layer, per-offset projections of the sinusoid table through W_{k,R},
/// filled on first use.
struct RelRows<F: Scalar> {
    rows: Vec<RefCell<Vec<Option<Rc<Vec<F>>>>>>,
}

impl<F: Scalar> RelRows<F> {
    fn new(n_layers: usize, table_rows: usize) -> Self {
        RelRows {
            rows: (0..n_layers)
                .map(|_| RefCell::new(vec![None; table_rows]))
                .collect(),
        }
    }

    fn get(
        &self,
        layer: usize,
        offset: i64,
        wkr: &Tensor<F>,
        sinusoid: &SinusoidTable<F>,
    ) -> Rc<Vec<F>> {
        let slot = sinusoid.row_index(offset);
        let mut cached = self.rows[layer].borrow_mut();
        if let Some(row) = &cached[slot] {
            return row.clone();
        }
        let row = Rc::new(matvec(sinusoid.table().row(slot), wkr));
        cached[slot] = Some(row.clone());
        row
    }
}

/// Relative-attention scores between explicit query and key states, one
/// matrix per head, with illegal pairs set to negative infinity.
///
/// `offsets` and `legal` are row-major over query-index × key-index. Score
/// `[i][j]` is `(q_i + u)·k_j + (q_i + v)·(W_{k,R} R_{offset})`, per head,
/// scaled by the inverse square root of the head width.
pub fn attention_scores<F: Scalar>(
    q_states: &Tensor<F>,
    k_states: &Tensor<F>,
    offsets: &[i64],
    legal: &[bool],
    layer: &LayerParams<F>,
    u: &Tensor<F>,
    v: &Tensor<F>,
    sinusoid: &SinusoidTable<F>,
    n_heads: usize,
) -> Result<Vec<Tensor<F>>> {
    let d = layer.wq.rows();
    let (m, n) = (q_states.rows(), k_states.rows());
    if q_states.cols() != d || k_states.cols() != d {
        return Err(Error::ShapeMismatch {
            name: "attention states".into(),
            expected: vec![m, d],
            actual: vec![q_states.rows(), q_states.cols()],
        });
    }
    if offsets.len() != m * n || legal.len() != m * n {
        return Err(Error::ShapeMismatch {
            name: "offset table".into(),
            expected: vec![m, n],
            actual: vec![offsets.len()],
        });
    }
    let dh = d / n_heads;
    let scale = real::<F>(1.0 / (dh as f64).sqrt());
    let q = Tensor::new(vec![m, d], matmul(q_states.data(), layer.wq.data(), m, d, d))?;
    let k = Tensor::new(vec![n, d], matmul(k_states.data(), layer.wke.data(), n, d, d))?;
    let rel = RelRows::new(1, sinusoid.rows());

    let mut out = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut scores = vec![F::neg_infinity(); m * n];
        for i in 0..m {
            let qu = add_vec(&q.row(i)[cols.clone()], &u.data()[cols.clone()]);
            let qv = add_vec(&q.row(i)[cols.clone()], &v.data()[cols.clone()]);
            for j in 0..n {
                if !legal[i * n + j] {
                    continue;
                }
                let kr = rel.get(0, offsets[i * n + j], &layer.wkr, sinusoid);
                let s = dot(&qu, &k.row(j)[cols.clone()]) + dot(&qv, &kr[cols.clone()]);
                scores[i * n + j] = s * scale;
            }
        }
        out.push(Tensor::new(vec![m, n], scores)?);
    }
    Ok(out)
}

/// One full post-norm block over a dense state matrix.
fn dense_block<F: Scalar>(
    x: &Tensor<F>,
    offsets: &[i64],
    legal: &[bool],
    layer: &LayerParams<F>,
    params: &Params<F>,
    config: &ModelConfig,
    sinusoid: &SinusoidTable<F>,
) -> Result<Tensor<F>> {
    let (t, d) = (x.rows(), x.cols());
    let heads = attention_scores(
        x, x, offsets, legal, layer, &params.u, &params.v, sinusoid, config.n_heads,
    )?;
    let val = matmul(x.data(), layer.wv.data(), t, d, d);
    let dh = config.d_head();
    let mut ctx = vec![F::zero(); t * d];
    for (h, score) in heads.iter().enumerate() {
        for i in 0..t {
            let mut probs = score.row(i).to_vec();
            softmax_in_place(&mut probs);
            for (j, &p) in probs.iter().enumerate() {
                if p == F::zero() {
                    continue;
                }
                for c in 0..dh {
                    ctx[i * d + h * dh + c] += p * val[j * d + h * dh + c];
                }
            }
        }
    }
    let attn = matmul(&ctx, layer.wo.data(), t, d, d);
    let mut out = Vec::with_capacity(t * d);
    for i in 0..t {
        let summed = add_vec(&x.row(i), &attn[i * d..(i + 1) * d]);
        let x1 = layer_norm_row(&summed, layer.ln1_g.data(), layer.ln1_b.data());
        let mut inner = matvec(&x1, &layer.ffn_w1);
        for (iv, b) in inner.iter_mut().zip(layer.ffn_b1.data()) {
            *iv = (*iv + *b).max(F::zero());
        }
        let mut ffn = matvec(&inner, &layer.ffn_w2);
        for (fv, b) in ffn.iter_mut().zip(layer.ffn_b2.data()) {
            *fv += *b;
        }
        let summed = add_vec(&x1, &ffn);
        out.extend(layer_norm_row(&summed, layer.ln2_g.data(), layer.ln2_b.data()));
    }
    Tensor::new(vec![t, d], out)
}

/// Where a cached context position sits relative to the span.
#[derive(Clone, Copy, Debug)]
enum CtxPos {
    /// Composed coordinate of a left-context token (before the span start).
    Left(i64),
    /// Rank within the right block (right context, then style token).
    Right(i64),
}

/// Content states of the context positions, encoded once and reused across
/// every candidate span at the same location.
pub struct ContextCache<F: Scalar> {
    a: i64,
    sides: Vec<CtxPos>,
    /// Per layer: key/value projections of that layer's input states.
    ctx_k: Vec<Tensor<F>>,
    ctx_v: Vec<Tensor<F>>,
    rel: RelRows<F>,
    l2r_span_len: Option<usize>,
}

impl<F: Scalar> ContextCache<F> {
    /// Encodes the contexts. `right` includes any trailing style token. In
    /// left-to-right mode the assumed span length must be given, because
    /// without offset collapse the right block's coordinates — and hence
    /// its states — depend on it.
    pub fn build(
        params: &Params<F>,
        config: &ModelConfig,
        sinusoid: &SinusoidTable<F>,
        left: &[u32],
        right: &[u32],
        l2r_span_len: Option<usize>,
    ) -> Result<Self> {
        if config.l2r != l2r_span_len.is_some() {
            return Err(Error::Contract(
                "an assumed span length is required exactly in left-to-right mode".into(),
            ));
        }
        let a = left.len() as i64;
        let gap = match l2r_span_len {
            Some(l) => l as i64,
            None => 1,
        };
        let mut sides = Vec::with_capacity(left.len() + right.len());
        let mut coords = Vec::with_capacity(sides.capacity());
        for (p, _) in left.iter().enumerate() {
            sides.push(CtxPos::Left(p as i64));
            coords.push(p as i64);
        }
        for (r, _) in right.iter().enumerate() {
            sides.push(CtxPos::Right(r as i64));
            coords.push(a + gap + r as i64);
        }

        let ids: Vec<u32> = left.iter().chain(right).copied().collect();
        let d = config.d_model;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &tok in &ids {
            if tok as usize >= config.vocab_size {
                return Err(Error::OutOfVocab(format!(
                    "token id {tok} outside vocabulary of {}",
                    config.vocab_size
                )));
            }
            data.extend_from_slice(params.embed.row(tok as usize));
        }
        let mut x = Tensor::new(vec![ids.len(), d], data)?;

        let n = ids.len();
        let mut offsets = vec![0i64; n * n];
        for i in 0..n {
            for j in 0..n {
                offsets[i * n + j] = coords[i] - coords[j];
            }
        }
        let legal = vec![true; n * n];
        let rel = RelRows::new(config.n_layers, sinusoid.rows());

        let mut ctx_k = Vec::with_capacity(config.n_layers);
        let mut ctx_v = Vec::with_capacity(config.n_layers);
        for layer in &params.layers {
            ctx_k.push(Tensor::new(
                vec![n, d],
                matmul(x.data(), layer.wke.data(), n, d, d),
            )?);
            ctx_v.push(Tensor::new(
                vec![n, d],
                matmul(x.data(), layer.wv.data(), n, d, d),
            )?);
            x = dense_block(&x, &offsets, &legal, layer, params, config, sinusoid)?;
        }
        Ok(ContextCache { a, sides, ctx_k, ctx_v, rel, l2r_span_len })
    }

    fn n_ctx(&self) -> usize {
        self.sides.len()
    }

    /// Offset from a span position at the given rank to a cached context
    /// position. Collapsed mode: left context at raw distance, right block
    /// counting down from −2. Left-to-right mode: raw distances under the
    /// assumed span length.
    fn span_to_ctx(&self, rank: i64, pos: CtxPos) -> i64 {
        match (pos, self.l2r_span_len) {
            (CtxPos::Left(j), _) => self.a + rank - j,
            (CtxPos::Right(r), None) => -2 - r,
            (CtxPos::Right(r), Some(l)) => rank - l as i64 - r,
        }
    }
}

/// An incremental decoding/scoring session: span tokens are appended one at
/// a time, and the next-slot distribution is available after each append.
pub struct DecodeSession<'a, F: Scalar> {
    cache: &'a ContextCache<F>,
    params: &'a Params<F>,
    config: &'a ModelConfig,
    sinusoid: &'a SinusoidTable<F>,
    tokens: Vec<u32>,
    span_k: Vec<Vec<Vec<F>>>,
    span_v: Vec<Vec<Vec<F>>>,
    cap: Option<usize>,
}

impl<'a, F: Scalar> DecodeSession<'a, F> {
    pub fn new(
        cache: &'a ContextCache<F>,
        params: &'a Params<F>,
        config: &'a ModelConfig,
        sinusoid: &'a SinusoidTable<F>,
    ) -> Self {
        let cap = cache.l2r_span_len;
        DecodeSession {
            cache,
            params,
            config,
            sinusoid,
            tokens: Vec::new(),
            span_k: vec![Vec::new(); config.n_layers],
            span_v: vec![Vec::new(); config.n_layers],
            cap,
        }
    }

    /// Limits how many tokens may be appended; exceeding it is an error.
    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = Some(self.cap.map_or(cap, |c| c.min(cap)));
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Drops appended tokens beyond the first `n`, so a shared prefix can be
    /// reused across candidates.
    pub fn truncate(&mut self, n: usize) {
        self.tokens.truncate(n);
        for l in 0..self.config.n_layers {
            self.span_k[l].truncate(n);
            self.span_v[l].truncate(n);
        }
    }

    /// Runs one attention row: the query input against cached contexts plus
    /// the first `n_span` span positions, at the given span rank.
    fn attend_row(&self, x: &[F], layer_idx: usize, rank: i64, n_span: usize) -> Vec<F> {
        let layer = &self.params.layers[layer_idx];
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let dh = self.config.d_head();
        let scale = real::<F>(1.0 / (dh as f64).sqrt());

        let q = matvec(x, &layer.wq);
        let qu = add_vec(&q, self.params.u.data());
        let qv = add_vec(&q, self.params.v.data());

        let n_keys = self.cache.n_ctx() + n_span;
        let mut scores = vec![F::zero(); n_heads * n_keys.max(1)];
        let mut key_rows: Vec<(&[F], &[F])> = Vec::with_capacity(n_keys);
        let mut offs: Vec<i64> = Vec::with_capacity(n_keys);
        for (c, &side) in self.cache.sides.iter().enumerate() {
            key_rows.push((
                self.cache.ctx_k[layer_idx].row(c),
                self.cache.ctx_v[layer_idx].row(c),
            ));
            offs.push(self.cache.span_to_ctx(rank, side));
        }
        for t in 0..n_span {
            key_rows.push((&self.span_k[layer_idx][t], &self.span_v[layer_idx][t]));
            offs.push(rank - t as i64);
        }
        for (j, ((krow, _), &off)) in key_rows.iter().zip(&offs).enumerate() {
            let kr = self
                .cache
                .rel
                .get(layer_idx, off, &layer.wkr, self.sinusoid);
            for h in 0..n_heads {
                let cols = h * dh..(h + 1) * dh;
                let s = dot(&qu[cols.clone()], &krow[cols.clone()])
                    + dot(&qv[cols.clone()], &kr[cols.clone()]);
                scores[h * n_keys + j] = s * scale;
            }
        }

        let mut ctx = vec![F::zero(); d];
        for h in 0..n_heads {
            let row = &mut scores[h * n_keys..(h + 1) * n_keys];
            softmax_in_place(row);
            for (j, &(_, vrow)) in key_rows.iter().enumerate() {
                let p = row[j];
                if p == F::zero() {
                    continue;
                }
                for c in 0..dh {
                    ctx[h * dh + c] += p * vrow[h * dh + c];
                }
            }
        }
        let attn = matvec(&ctx, &layer.wo);
        let x1 = layer_norm_row(&add_vec(x, &attn), layer.ln1_g.data(), layer.ln1_b.data());
        let mut inner = matvec(&x1, &layer.ffn_w1);
        for (iv, b) in inner.iter_mut().zip(layer.ffn_b1.data()) {
            *iv = (*iv + *b).max(F::zero());
        }
        let mut ffn = matvec(&inner, &layer.ffn_w2);
        for (fv, b) in ffn.iter_mut().zip(layer.ffn_b2.data()) {
            *fv += *b;
        }
        layer_norm_row(&add_vec(&x1, &ffn), layer.ln2_g.data(), layer.ln2_b.data())
    }

    /// Appends a span token, extending the cached span states.
    pub fn push(&mut self, tok: u32) -> Result<()> {
        if let Some(cap) = self.cap {
            if self.tokens.len() >= cap {
                return Err(Error::DecodeCap(cap));
            }
        }
        if tok as usize >= self.config.vocab_size {
            return Err(Error::OutOfVocab(format!(
                "token id {tok} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let rank = self.tokens.len();
        let mut x = self.params.embed.row(tok as usize).to_vec();
        for l in 0..self.config.n_layers {
            self.span_k[l].push(matvec(&x, &self.params.layers[l].wke));
            self.span_v[l].push(matvec(&x, &self.params.layers[l].wv));
            x = self.attend_row(&x, l, rank as i64, rank + 1);
        }
        self.tokens.push(tok);
        Ok(())
    }

    /// Pre-softmax vocabulary logits for the next span slot.
    pub fn next_logits(&self) -> Vec<F> {
        let rank = self.tokens.len();
        let mut x = self.params.q_init.data().to_vec();
        for l in 0..self.config.n_layers {
            x = self.attend_row(&x, l, rank as i64, rank);
        }
        let v = self.config.vocab_size;
        matmul_tb(&x, self.params.embed.data(), 1, self.config.d_model, v)
    }

    /// Log-probabilities over the vocabulary for the next span slot.
    pub fn next_log_probs(&self) -> Vec<F> {
        log_softmax(&self.next_logits())
    }
}

/// Token-selection rule for [`decode`].
pub enum DecodeMode<F: Scalar> {
    /// Highest-probability token each step; ties break to the lowest id.
    Greedy,
    /// Categorical draw from each step's distribution.
    Sample,
    /// First token is the argmax of the given per-vocabulary bias (logit
    /// difference), later steps are greedy.
    Biased(Vec<F>),
}

/// What a decode produced: the inserted tokens, their log-probabilities
/// (with the end marker's appended when decoding ended on it), and whether
/// the length cap cut generation off before the marker.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome<F: Scalar> {
    pub tokens: Vec<u32>,
    pub token_log_probs: Vec<F>,
    pub capped: bool,
}

fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Decodes span tokens until the end-of-insertion marker or the model's
/// decode cap. `ban_marker_first` excludes the marker at the first step,
/// which forbids producing an empty insertion.
pub fn decode<F: Scalar>(
    session: &mut DecodeSession<F>,
    mode: &DecodeMode<F>,
    rng: &mut SeedRng,
    ban_marker_first: bool,
) -> Result<DecodeOutcome<F>> {
    let max_len = session.config.max_decode_len;
    let mut tokens = Vec::new();
    let mut lps = Vec::new();
    loop {
        let lp = session.next_log_probs();
        let step = session.len();
        let chosen = match mode {
            DecodeMode::Biased(bias) if step == 0 => {
                let mut biased = bias.clone();
                if ban_marker_first {
                    biased[EOI as usize] = F::neg_infinity();
                }
                argmax(&biased) as u32
            }
            DecodeMode::Sample => {
                let mut r = real::<F>(rng.gen_range(0.0..1.0));
                let mut pick = lp.len() - 1;
                for (i, &l) in lp.iter().enumerate() {
                    if ban_marker_first && step == 0 && i == EOI as usize {
                        continue;
                    }
                    r -= l.exp();
                    if r <= F::zero() {
                        pick = i;
                        break;
                    }
                }
                pick as u32
            }
            _ => {
                let mut row = lp.clone();
                if ban_marker_first && step == 0 {
                    row[EOI as usize] = F::neg_infinity();
                }
                argmax(&row) as u32
            }
        };
        if chosen == EOI {
            lps.push(lp[EOI as usize]);
            return Ok(DecodeOutcome { tokens, token_log_probs: lps, capped: false });
        }
        lps.push(lp[chosen as usize]);
        session.push(chosen)?;
        tokens.push(chosen);
        if session.len() >= max_len {
            return Ok(DecodeOutcome { tokens, token_log_probs: lps, capped: true });
        }
    }
}

/// Style distribution for a document: plain bidirectional encode of
/// `x ⊕ CLS`, classifier head on the top CLS state.
pub fn classify_style<F: Scalar>(
    params: &Params<F>,
    config: &ModelConfig,
    sinusoid: &SinusoidTable<F>,
    x: &[u32],
) -> Result<Vec<F>> {
    if config.num_styles == 0 {
        return Err(Error::Contract("model has no style classes".into()));
    }
    if x.is_empty() {
        return Err(Error::Contract("cannot classify an empty sequence".into()));
    }
    let mut ids = x.to_vec();
    ids.push(CLS);
    let d = config.d_model;
    let n = ids.len();
    let mut data = Vec::with_capacity(n * d);
    for &tok in &ids {
        if tok as usize >= config.vocab_size {
            return Err(Error::OutOfVocab(format!(
                "token id {tok} outside vocabulary of {}",
                config.vocab_size
            )));
        }
        data.extend_from_slice(params.embed.row(tok as usize));
    }
    let mut state = Tensor::new(vec![n, d], data)?;
    let mut offsets = vec![0i64; n * n];
    for i in 0..n {
        for j in 0..n {
            offsets[i * n + j] = i as i64 - j as i64;
        }
    }
    let legal = vec![true; n * n];
    for layer in &params.layers {
        state = dense_block(&state, &offsets, &legal, layer, params, config, sinusoid)?;
    }
    let cls = state.row(n - 1);
    let mut logits = matvec(cls, &params.cls_w);
    for (l, b) in logits.iter_mut().zip(params.cls_b.data()) {
        *l += *b;
    }
    let mut probs = logits;
    softmax_in_place(&mut probs);
    Ok(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{compose, compose_l2r};
    use crate::model::forward::{classify_log_probs, span_log_probs, DropoutPlan, ParamVars};
    use crate::numerics::Graph;

    fn tiny(l2r: bool) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_ff: 24,
            vocab_size: 11,
            max_offset: 8,
            dropout: 0.0,
            num_styles: 2,
            max_decode_len: 6,
            l2r,
        }
    }

    fn sin(config: &ModelConfig) -> SinusoidTable<f64> {
        SinusoidTable::new(config.d_model, config.max_offset).unwrap()
    }

    #[test]
    fn zero_weight_scores_are_zero_on_legal_pairs_only() {
        let config = tiny(false);
        let params = Params::<f64>::zeros(&config);
        let s = sin(&config);
        let q = Tensor::new(vec![2, 16], vec![0.3; 32]).unwrap();
        let k = Tensor::new(vec![3, 16], vec![0.7; 48]).unwrap();
        let offsets = vec![0, 1, 2, 0, -1, -2];
        let legal = vec![true, true, false, true, true, true];
        let heads = attention_scores(
            &q, &k, &offsets, &legal, &params.layers[0], &params.u, &params.v, &s, 2,
        )
        .unwrap();
        for head in &heads {
            for i in 0..2 {
                for j in 0..3 {
                    if legal[i * 3 + j] {
                        assert_eq!(head.at(i, j), 0.0);
                    } else {
                        assert_eq!(head.at(i, j), f64::NEG_INFINITY);
                    }
                }
            }
            // Softmax over the first row spreads mass only over legal keys.
            let mut row = head.row(0).to_vec();
            softmax_in_place(&mut row);
            assert_eq!(row[2], 0.0);
            assert!((row[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_legal_key_takes_all_attention() {
        let config = tiny(false);
        let mut rng = SeedRng::new(3);
        let params = Params::<f64>::init(&config, &mut rng);
        let s = sin(&config);
        let q = Tensor::new(vec![1, 16], (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
        let k = Tensor::new(vec![3, 16], (0..48).map(|i| (i as f64).sin()).collect()).unwrap();
        let heads = attention_scores(
            &q,
            &k,
            &[0, 3, -1],
            &[false, true, false],
            &params.layers[0],
            &params.u,
            &params.v,
            &s,
            2,
        )
        .unwrap();
        for head in &heads {
            let mut row = head.row(0).to_vec();
            softmax_in_place(&mut row);
            assert_eq!(row, vec![0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn permuting_keys_with_their_offsets_leaves_context_invariant() {
        let config = tiny(false);
        let mut rng = SeedRng::new(4);
        let params = Params::<f64>::init(&config, &mut rng);
        let s = sin(&config);
        let d = config.d_model;
        let q = Tensor::new(vec![1, d], (0..d).map(|i| (i as f64 * 0.17).cos()).collect())
            .unwrap();
        let kdata: Vec<f64> = (0..4 * d).map(|i| (i as f64 * 0.03).sin()).collect();
        let k = Tensor::new(vec![4, d], kdata.clone()).unwrap();
        let offsets = [2i64, 1, -2, -3];
        let perm = [2usize, 0, 3, 1];

        let context = |k: &Tensor<f64>, offsets: &[i64]| -> Vec<f64> {
            let legal = vec![true; 4];
            let heads = attention_scores(
                &q, k, offsets, &legal, &params.layers[0], &params.u, &params.v, &s, 2,
            )
            .unwrap();
            let val = matmul(k.data(), params.layers[0].wv.data(), 4, d, d);
            let dh = d / 2;
            let mut ctx = vec![0.0; d];
            for (h, head) in heads.iter().enumerate() {
                let mut row = head.row(0).to_vec();
                softmax_in_place(&mut row);
                for (j, &p) in row.iter().enumerate() {
                    for c in 0..dh {
                        ctx[h * dh + c] += p * val[j * d + h * dh + c];
                    }
                }
            }
            ctx
        };

        let base = context(&k, &offsets);
        let mut pdata = Vec::new();
        let mut poffsets = Vec::new();
        for &p in &perm {
            pdata.extend_from_slice(&kdata[p * d..(p + 1) * d]);
            poffsets.push(offsets[p]);
        }
        let pk = Tensor::new(vec![4, d], pdata).unwrap();
        let permuted = context(&pk, &poffsets);
        for (x, y) in base.iter().zip(&permuted) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn incremental_session_matches_batch_forward() {
        let config = tiny(false);
        let mut rng = SeedRng::new(11);
        let params = Params::<f64>::init(&config, &mut rng);
        let s = sin(&config);
        let (left, span, right) = (&[5u32, 6], &[7u32, 8, 9], &[10u32, 4]);
        let row = compose(left, span, right, None, false);

        let g = Graph::new();
        let pv = ParamVars::new(&g, &params, false);
        let (lp, _) =
            span_log_probs(&g, &pv, &config, &s, &row, &DropoutPlan::none()).unwrap();
        let batch = g.value(lp).to_vec();

        let cache = ContextCache::build(&params, &config, &s, left, right, None).unwrap();
        let mut session = DecodeSession::new(&cache, &params, &config, &s);
        for (rank, &tok) in span.iter().enumerate() {
            let inc = session.next_log_probs();
            let want = &batch[rank * config.vocab_size..(rank + 1) * config.vocab_size];
            for (x, y) in inc.iter().zip(want) {
                assert!((x - y).abs() < 1e-10, "rank {rank}: {x} vs {y}");
            }
            session.push(tok).unwrap();
        }
        // Marker slot after the full span.
        let inc = session.next_log_probs();
        let want = &batch[span.len() * config.vocab_size..];
        for (x, y) in inc.iter().zip(want) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn l2r_session_matches_l2r_batch_forward() {
        let config = tiny(true);
        let mut rng = SeedRng::new(12);
        let params = Params::<f64>::init(&config, &mut rng);
        let s = sin(&config);
        let (left, span, right) = (&[5u32, 6], &[7u32, 8], &[10u32, 4, 3]);
        let row = compose_l2r(left, span, right, None, false).unwrap();

        let g = Graph::new();
        let pv = ParamVars::new(&g, &params, false);
        let (lp, _) =
            span_log_probs(&g, &pv, &config, &s, &row, &DropoutPlan::none()).unwrap();
        let batch = g.value(lp).to_vec();

        let cache =
            ContextCache::build(&params, &config, &s, left, right, Some(span.len())).unwrap();
        let mut session = DecodeSession::new(&cache, &params, &config, &s);
        for (rank, &tok) in span.iter().enumerate() {
            let inc = session.next_log_probs();
            let want = &batch[rank * config.vocab_size..(rank + 1) * config.vocab_size];
            for (x, y) in inc.iter().zip(want) {
                assert!((x - y).abs() < 1e-10, "rank {rank}");
            }
            session.push(tok).unwrap();
        }
        // The assumed length also caps the session.
        assert!(matches!(session.push(5), Err(Error::DecodeCap(2))));
    }

    #[test]
    fn empty_contexts_and_zero_params_decode_uniformly() {
        let config = tiny(false);
        let params = Params::<f64>::zeros(&config);
        let s = sin(&config);
        let cache = ContextCache::build(&params, &config, &s, &[], &[], None).unwrap();
        let session = DecodeSession::new(&cache, &params, &config, &s);
        let lp = session.next_log_probs();
        let want = -(config.vocab_size as f64).ln();
        for x in lp {
            assert!((x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_decode_matches_argmax_trace_of_batch_forward() {
        let config = tiny(false);
        let mut rng = SeedRng::new(21);
        let params = Params::<f64>::init(&config, &mut rng);
        let s = sin(&config);
        let (left, right) = (&[5u32, 6], &[9u32]);
        let cache = ContextCache::build(&params, &config, &s, left, right, None).unwrap();
        let mut session = DecodeSession::new(&cache, &params, &config, &s);
        let out = decode(&mut session, &DecodeMode::Greedy, &mut SeedRng::new(0), false)
            .unwrap();

        let row = compose(left, &out.tokens, right, None, false);
        let g = Graph::new();
        let pv = ParamVars::new(&g, &params, false);
        let (lp, _) =
            span_log_probs(&g, &pv, &config, &s, &row, &DropoutPlan::none()).unwrap();
        let batch = g.value(lp).to_vec();
        let v = config.vocab_size;
        for (rank, &tok) in out.tokens.iter().enumerate() {
            assert_eq!(argmax(&batch[rank * v..(rank + 1) * v]), tok as usize);
        }
        if !out.capped {
            let last = &batch[out.tokens.len() * v..];
            assert_eq!(argmax(last), EOI as usize);
        }
    }

    #[test]
    fn zero_params_greedy_hits_the_cap_with_the_first_vocab_id() {
        let config = tiny(false);
        let params = Params::<f64>::zeros(&config);
        let s = sin(&config);
        let cache = ContextCache::build(&params, &config, &s, &[5], &[6], None).unwrap();
        let mut session = DecodeSession::new(&cache, &params, &config, &s);
        let out = decode(&mut session, &DecodeMode::Greedy, &mut SeedRng::new(0), false)
            .unwrap();
        assert!(out.capped);
        assert_eq!(out.tokens, vec![0; config.max_decode_len]);
    }

    #[test]
    fn biased_mode_picks_the_bias_argmax_first() {
        let config = tiny(false);
        let mut rng = SeedRng::new(22);
        let params = Params::<f64>::init(&config, &mut rng);
        let s = sin(&config);
        let cache = ContextCache::build(&params, &config, &s, &[5], &[6], None).unwrap();
        let mut bias = vec![0.0; config.vocab_size];
        bias[7] = 5.0;
        bias[EOI as usize] = 9.0;
        let mut session = DecodeSession::new(&cache, &params, &config, &s);
        let out = decode(
            &mut session,
            &DecodeMode::Biased(bias.clone()),
            &mut SeedRng::new(0),
            true,
        )
        .unwrap();
        // The marker outranks everything but is banned at the first step.
        assert_eq!(out.tokens.first(), Some(&7));

        let cache2 = ContextCache::build(&params, &config, &s, &[5], &[6], None).unwrap();
        let mut session2 = DecodeSession::new(&cache2, &params, &config, &s);
        let out2 =
            decode(&mut session2, &DecodeMode::Biased(bias), &mut SeedRng::new(0), false)
                .unwrap();
        assert_eq!(out2.tokens, Vec::<u32>::new());
        assert!(!out2.capped);
    }

    #[test]
    fn session_truncate_restores_earlier_distributions() {
        let config = tiny(false);
        let mut rng = SeedRng::new(23);
        let params = Params::<f64>::init(&config, &mut rng);
        let s = sin(&config);
        let cache = ContextCache::build(&params, &config, &s, &[5, 6], &[9], None).unwrap();
        let mut session = DecodeSession::new(&cache, &params, &config, &s);
        session.push(7).unwrap();
        let after_one = session.next_log_probs();
        session.push(8).unwrap();
        session.truncate(1);
        assert_eq!(session.next_log_probs(), after_one);
    }

    #[test]
    fn plain_classify_matches_graph_classify() {
        let config = tiny(false);
        let mut rng = SeedRng::new(31);
        let params = Params::<f64>::init(&config, &mut rng);
        let s = sin(&config);
        let x = [5u32, 6, 7, 8];
        let probs = classify_style(&params, &config, &s, &x).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let g = Graph::new();
        let pv = ParamVars::new(&g, &params, false);
        let lp = classify_log_probs(&g, &pv, &config, &s, &x, &DropoutPlan::none()).unwrap();
        for (p, l) in probs.iter().zip(g.value(lp).iter()) {
            assert!((p - l.exp()).abs() < 1e-10);
        }

        let zero = Params::<f64>::zeros(&config);
        let probs = classify_style(&zero, &config, &s, &x).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn explicit_cap_stops_push() {
        let config = tiny(false);
        let params = Params::<f64>::zeros(&config);
        let s = sin(&config);
        let cache = ContextCache::build(&params, &config, &s, &[5], &[], None).unwrap();
        let mut session = DecodeSession::new(&cache, &params, &config, &s).with_cap(2);
        session.push(4).unwrap();
        session.push(4).unwrap();
        assert!(matches!(session.push(4), Err(Error::DecodeCap(2))));
    }
}
