//! Unpaired style transfer by iterative post-editing.
//!
//! Each round scores every candidate span and gap by how much likelier its
//! contents are under the source style than the target style; the most
//! suspicious one — if suspicious enough — is rewritten by decoding a
//! replacement under the target style. The loop stops when nothing crosses
//! the threshold, with an optional forced insertion at the sentence start
//! for inputs the classifier still confidently assigns to the source style.

use std::io::Write;

use crate::editor::Editor;
use crate::encoding::{style_id, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{
    classify_style, decode, ContextCache, DecodeMode, DecodeSession, ModelConfig, Params,
};
use crate::numerics::{to_f64, Scalar, SeedRng};
use crate::positional::SinusoidTable;

/// Hyperparameters of the transfer loop.
#[derive(Debug, Clone)]
pub struct TransferConfig {
    /// Longest existing span a replacement candidate may cover.
    pub max_span_len: usize,
    /// Minimum source-to-target odds ratio for an edit to fire.
    pub v_thres: f64,
    /// Hard cap on edit rounds.
    pub max_iters: usize,
    /// Pick the first decoded token by the style-contrast argmax instead of
    /// plain greedy.
    pub biased_sampling: bool,
    /// Allow one insertion at position 0 when no edit fires but the
    /// classifier still assigns the source style confidently.
    pub forced_insertion: bool,
    pub forced_insertion_conf: f64,
    pub s_src: usize,
    pub s_tgt: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            max_span_len: 4,
            v_thres: 2.0,
            max_iters: 10,
            biased_sampling: false,
            forced_insertion: false,
            forced_insertion_conf: 0.9,
            s_src: 0,
            s_tgt: 1,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_span_len < 1 {
            return Err(Error::Config("max span length must be at least 1".into()));
        }
        if !(self.v_thres > 0.0) {
            return Err(Error::Config(format!(
                "threshold {} must be positive",
                self.v_thres
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditKind {
    Insert,
    Delete,
    Replace,
}

impl EditKind {
    pub fn name(self) -> &'static str {
        match self {
            EditKind::Insert => "insert",
            EditKind::Delete => "delete",
            EditKind::Replace => "replace",
        }
    }
}

/// One executed edit: `y` replaces the half-open span `x[i..j]`.
///
/// The kind is determined by the shape of the edit — insertion fills an
/// empty span with a non-empty `y`, deletion empties a non-empty span —
/// and `score` is the odds ratio that triggered it.
#[derive(Debug, Clone)]
pub struct EditOp {
    pub kind: EditKind,
    pub i: usize,
    pub j: usize,
    pub y: Vec<u32>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// No candidate reached the threshold.
    Threshold,
    /// The iteration cap cut the loop off.
    MaxIters,
    /// The one permitted forced insertion was already spent, yet the
    /// classifier still saw the source style.
    ForcedInsertionExhausted,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Threshold => "threshold",
            Termination::MaxIters => "max_iters",
            Termination::ForcedInsertionExhausted => "forced_insertion_exhausted",
        }
    }
}

/// One audit-log row: the op executed at `iter` and the sequence after it.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub iter: usize,
    pub op: EditOp,
    pub x_after: Vec<u32>,
}

/// The full audit log of one transfer run.
#[derive(Debug, Clone)]
pub struct TransferTrace {
    pub steps: Vec<TraceStep>,
    pub terminated_by: Termination,
}

impl TransferTrace {
    /// Writes the trace as JSON-lines, one object per executed edit, with
    /// tokens rendered as vocabulary words.
    pub fn write_jsonl(&self, vocab: &Vocabulary, w: &mut impl Write) -> Result<()> {
        for step in &self.steps {
            let words = |ids: &[u32]| -> Result<Vec<String>> {
                ids.iter().map(|&t| Ok(vocab.token(t)?.to_string())).collect()
            };
            let line = serde_json::json!({
                "iter": step.iter,
                "kind": step.op.kind.name(),
                "i": step.op.i,
                "j": step.op.j,
                "y": words(&step.op.y)?,
                "score": step.op.score,
                "x_after": words(&step.x_after)?,
            });
            writeln!(w, "{line}").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }
}

/// The style-transfer loop over one trained conditional model.
pub struct Styler<'a, F: Scalar> {
    params: &'a Params<F>,
    config: &'a ModelConfig,
    sinusoid: &'a SinusoidTable<F>,
}

impl<'a, F: Scalar> Styler<'a, F> {
    pub fn new(
        params: &'a Params<F>,
        config: &'a ModelConfig,
        sinusoid: &'a SinusoidTable<F>,
    ) -> Self {
        Styler { params, config, sinusoid }
    }

    fn editor(&self) -> Editor<'_, F> {
        Editor::new(self.params, self.config, self.sinusoid)
    }

    fn check_styles(&self, cfg: &TransferConfig) -> Result<()> {
        if self.config.l2r {
            return Err(Error::Contract(
                "style transfer needs the insertion model, not the left-to-right ablation".into(),
            ));
        }
        let m = self.config.num_styles;
        if cfg.s_src >= m || cfg.s_tgt >= m {
            return Err(Error::Contract(format!(
                "styles {} and {} must both lie below the model's {m} classes",
                cfg.s_src, cfg.s_tgt
            )));
        }
        Ok(())
    }

    /// How much likelier `x[i..j]` is under the source style than the
    /// target style, in the same contexts. Values above 1 mark spans that
    /// carry source-style signal.
    pub fn span_score_f(
        &self,
        x: &[u32],
        i: usize,
        j: usize,
        s_src: usize,
        s_tgt: usize,
    ) -> Result<f64> {
        let ed = self.editor();
        let src = ed.estimate_insertion(x, i, j, &x[i..j], Some(s_src))?;
        let tgt = ed.estimate_insertion(x, i, j, &x[i..j], Some(s_tgt))?;
        Ok((src.total_logprob - tgt.total_logprob).exp())
    }

    /// Scores every replacement span of length `1..=L` and every insertion
    /// gap, highest odds first; ties order by position.
    pub fn score_all_candidates(
        &self,
        x: &[u32],
        cfg: &TransferConfig,
    ) -> Result<Vec<((usize, usize), f64)>> {
        self.check_styles(cfg)?;
        let mut out = Vec::new();
        for i in 0..=x.len() {
            for j in i..=(i + cfg.max_span_len).min(x.len()) {
                if j > i || i == j {
                    out.push(((i, j), self.span_score_f(x, i, j, cfg.s_src, cfg.s_tgt)?));
                }
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(out)
    }

    /// Decodes the target-style payload for the span `x[i..j]`. Insertions
    /// (empty spans) may not decode an empty payload.
    fn decode_payload(&self, x: &[u32], i: usize, j: usize, cfg: &TransferConfig) -> Result<Vec<u32>> {
        let tgt_cache = self.payload_cache(x, i, j, cfg.s_tgt)?;
        let mut session =
            DecodeSession::new(&tgt_cache, self.params, self.config, self.sinusoid);
        let mode = if cfg.biased_sampling {
            let lp_tgt = session.next_log_probs();
            let src_cache = self.payload_cache(x, i, j, cfg.s_src)?;
            let src_session =
                DecodeSession::new(&src_cache, self.params, self.config, self.sinusoid);
            let lp_src = src_session.next_log_probs();
            let bias = lp_tgt
                .iter()
                .zip(&lp_src)
                .map(|(&t, &s)| t - s)
                .collect::<Vec<F>>();
            DecodeMode::Biased(bias)
        } else {
            DecodeMode::Greedy
        };
        let mut rng = SeedRng::new(0);
        let out = decode(&mut session, &mode, &mut rng, i == j)?;
        Ok(out.tokens)
    }

    fn payload_cache(&self, x: &[u32], i: usize, j: usize, style: usize) -> Result<ContextCache<F>> {
        let mut right = x[j..].to_vec();
        right.push(style_id(style));
        ContextCache::build(self.params, self.config, self.sinusoid, &x[..i], &right, None)
    }

    /// Runs the edit loop on `x` and returns the transferred sequence with
    /// its audit trace.
    pub fn transfer(&self, x: &[u32], cfg: &TransferConfig) -> Result<(Vec<u32>, TransferTrace)> {
        cfg.validate()?;
        self.check_styles(cfg)?;
        if x.is_empty() {
            return Err(Error::Contract("cannot transfer an empty sequence".into()));
        }
        let mut cur = x.to_vec();
        let mut steps = Vec::new();
        let mut forced_used = false;
        let mut iter = 0;
        let terminated_by = loop {
            if iter == cfg.max_iters {
                break Termination::MaxIters;
            }
            iter += 1;
            let candidates = self.score_all_candidates(&cur, cfg)?;
            let &((i, j), score) = candidates.first().expect("candidate set is never empty");
            let chosen = if score >= cfg.v_thres {
                Some((i, j, score))
            } else if cfg.forced_insertion {
                let probs = classify_style(self.params, self.config, self.sinusoid, &cur)?;
                if to_f64(probs[cfg.s_src]) <= cfg.forced_insertion_conf {
                    break Termination::Threshold;
                } else if forced_used {
                    break Termination::ForcedInsertionExhausted;
                } else {
                    forced_used = true;
                    let f0 = self.span_score_f(&cur, 0, 0, cfg.s_src, cfg.s_tgt)?;
                    Some((0, 0, f0))
                }
            } else {
                break Termination::Threshold;
            };
            let (i, j, score) = chosen.expect("an edit was selected");
            let y = self.decode_payload(&cur, i, j, cfg)?;
            let kind = if i == j {
                EditKind::Insert
            } else if y.is_empty() {
                EditKind::Delete
            } else {
                EditKind::Replace
            };
            let mut next = cur[..i].to_vec();
            next.extend_from_slice(&y);
            next.extend_from_slice(&cur[j..]);
            steps.push(TraceStep {
                iter,
                op: EditOp { kind, i, j, y, score },
                x_after: next.clone(),
            });
            cur = next;
        };
        Ok((cur, TransferTrace { steps, terminated_by }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{train, TrainConfig, TrainDoc};

    fn tiny() -> ModelConfig {
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
            l2r: false,
        }
    }

    fn perturbed(config: &ModelConfig, seed: u64) -> Params<f64> {
        let mut p = Params::zeros(config);
        p.perturb(&mut SeedRng::new(seed), 0.8);
        p
    }

    #[test]
    fn identical_styles_score_one_and_change_nothing() {
        let config = tiny();
        let params = perturbed(&config, 31);
        let sin = SinusoidTable::new(config.d_model, config.max_offset).unwrap();
        let st = Styler::new(&params, &config, &sin);
        let x = [4, 5, 6, 7];
        for (i, j) in [(0usize, 0usize), (1, 2), (0, 3), (4, 4)] {
            assert_eq!(st.span_score_f(&x, i, j, 1, 1).unwrap(), 1.0);
        }
        let cfg = TransferConfig { s_src: 1, s_tgt: 1, ..Default::default() };
        let (out, trace) = st.transfer(&x, &cfg).unwrap();
        assert_eq!(out, x.to_vec());
        assert!(trace.steps.is_empty());
        assert_eq!(trace.terminated_by, Termination::Threshold);
    }

    #[test]
    fn a_style_blind_model_scores_every_candidate_one() {
        let config = tiny();
        let mut params = perturbed(&config, 32);
        for (name, t) in params.named_tensors_mut() {
            if name == "embed" {
                let d = config.d_model;
                for s in 0..config.num_styles {
                    let row = style_id(s) as usize;
                    for v in &mut t.data_mut()[row * d..(row + 1) * d] {
                        *v = 0.0;
                    }
                }
            }
        }
        let sin = SinusoidTable::new(config.d_model, config.max_offset).unwrap();
        let st = Styler::new(&params, &config, &sin);
        let cfg = TransferConfig::default();
        for (_, f) in st.score_all_candidates(&[4, 5, 6], &cfg).unwrap() {
            assert_eq!(f, 1.0);
        }
    }

    #[test]
    fn candidate_enumeration_counts_gaps_and_spans() {
        let config = tiny();
        let params = perturbed(&config, 33);
        let sin = SinusoidTable::new(config.d_model, config.max_offset).unwrap();
        let st = Styler::new(&params, &config, &sin);
        let cfg = TransferConfig { max_span_len: 2, ..Default::default() };
        let scored = st.score_all_candidates(&[4, 5], &cfg).unwrap();
        assert_eq!(scored.len(), 6);
        let mut spans: Vec<(usize, usize)> = scored.iter().map(|&(s, _)| s).collect();
        spans.sort();
        assert_eq!(spans, vec![(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]);
        for w in scored.windows(2) {
            assert!(w[0].1 >= w[1].1, "scores not descending: {scored:?}");
        }
        for &((i, j), f) in &scored {
            let direct = st.span_score_f(&[4, 5], i, j, cfg.s_src, cfg.s_tgt).unwrap();
            assert_eq!(f, direct);
        }
    }

    #[test]
    fn infinite_threshold_returns_the_input_unedited() {
        let config = tiny();
        let params = perturbed(&config, 34);
        let sin = SinusoidTable::new(config.d_model, config.max_offset).unwrap();
        let st = Styler::new(&params, &config, &sin);
        let cfg = TransferConfig { v_thres: f64::INFINITY, ..Default::default() };
        let (out, trace) = st.transfer(&[4, 5, 6], &cfg).unwrap();
        assert_eq!(out, vec![4, 5, 6]);
        assert!(trace.steps.is_empty());
        assert_eq!(trace.terminated_by, Termination::Threshold);
    }

    #[test]
    fn the_loop_halts_at_the_iteration_cap_and_logs_replayable_edits() {
        let config = tiny();
        let params = perturbed(&config, 35);
        let sin = SinusoidTable::new(config.d_model, config.max_offset).unwrap();
        let st = Styler::new(&params, &config, &sin);
        let cfg = TransferConfig {
            v_thres: 1e-6,
            max_iters: 3,
            ..Default::default()
        };
        let x = [4, 5, 6];
        let (out, trace) = st.transfer(&x, &cfg).unwrap();
        assert_eq!(trace.terminated_by, Termination::MaxIters);
        assert_eq!(trace.steps.len(), 3);
        let mut cur = x.to_vec();
        for step in &trace.steps {
            let op = &step.op;
            match op.kind {
                EditKind::Insert => assert!(op.i == op.j && !op.y.is_empty()),
                EditKind::Delete => assert!(op.j > op.i && op.y.is_empty()),
                EditKind::Replace => assert!(op.j > op.i && !op.y.is_empty()),
            }
            let mut next = cur[..op.i].to_vec();
            next.extend_from_slice(&op.y);
            next.extend_from_slice(&cur[op.j..]);
            assert_eq!(next, step.x_after, "trace does not replay");
            cur = next;
        }
        assert_eq!(cur, out);
    }

    fn lexicon_model() -> (ModelConfig, Params<f64>) {
        let config = tiny();
        // Token 9 appears only in style 0, token 10 only in style 1; the
        // rest of each document is shared filler.
        let mut docs = Vec::new();
        for _ in 0..25 {
            docs.push(TrainDoc::styled(vec![6, 7, 8, 9], 0));
            docs.push(TrainDoc::styled(vec![6, 7, 8, 10], 1));
        }
        let tc = TrainConfig {
            steps: 400,
            batch_size: 8,
            lr: 3e-3,
            warmup: 10,
            report_every: 200,
            seed: 41,
            ..Default::default()
        };
        let params = train::<f64>(&docs, &config, &tc, |_| Ok(())).unwrap();
        (config, params)
    }

    #[test]
    fn a_lexicon_model_swaps_the_style_word_and_can_force_an_insertion() {
        let (config, params) = lexicon_model();
        let sin = SinusoidTable::new(config.d_model, config.max_offset).unwrap();
        let st = Styler::new(&params, &config, &sin);
        let x = [6, 7, 8, 9];

        let f = st.span_score_f(&x, 3, 4, 0, 1).unwrap();
        assert!(f > 1.0, "style-0 marker scored {f}");

        let cfg = TransferConfig { max_span_len: 2, ..Default::default() };
        let (out, trace) = st.transfer(&x, &cfg).unwrap();
        assert_eq!(out, vec![6, 7, 8, 10], "trace: {trace:?}");
        assert!(trace.steps.len() <= 2);
        assert_eq!(trace.steps[0].op.kind, EditKind::Replace);
        assert_eq!(trace.terminated_by, Termination::Threshold);

        // With an unreachable threshold nothing fires, unless forced
        // insertion is on and the classifier still smells the source style.
        let off = TransferConfig {
            v_thres: f64::INFINITY,
            ..cfg.clone()
        };
        let (out_off, trace_off) = st.transfer(&x, &off).unwrap();
        assert_eq!(out_off, x.to_vec());
        assert!(trace_off.steps.is_empty());

        let on = TransferConfig {
            forced_insertion: true,
            ..off.clone()
        };
        let (out_on, trace_on) = st.transfer(&x, &on).unwrap();
        assert_eq!(trace_on.steps.len(), 1);
        let op = &trace_on.steps[0].op;
        assert_eq!(op.kind, EditKind::Insert);
        assert_eq!((op.i, op.j), (0, 0));
        assert!(!op.y.is_empty());
        let mut expect = op.y.clone();
        expect.extend_from_slice(&x);
        assert_eq!(out_on, expect);
        assert_ne!(trace_on.terminated_by, Termination::MaxIters);
    }

    #[test]
    fn traces_serialize_to_json_lines_with_words() {
        let config = tiny();
        let params = Params::<f64>::zeros(&config);
        let sin = SinusoidTable::new(config.d_model, config.max_offset).unwrap();
        let st = Styler::new(&params, &config, &sin);
        let cfg = TransferConfig {
            v_thres: 0.5,
            max_iters: 2,
            ..Default::default()
        };
        let (_, trace) = st.transfer(&[4, 5], &cfg).unwrap();
        assert_eq!(trace.steps.len(), 2);

        let vocab = Vocabulary::build(["a b c d e"], config.num_styles);
        assert_eq!(vocab.size(), config.vocab_size);
        let mut buf = Vec::new();
        trace.write_jsonl(&vocab, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["iter", "kind", "i", "j", "y", "score", "x_after"] {
                assert!(v.get(key).is_some(), "missing {key} in {line}");
            }
            assert!(v["y"].as_array().unwrap().iter().all(|w| w.is_string()));
        }
    }

    #[test]
    fn transfer_rejects_bad_styles_modes_and_inputs() {
        let config = tiny();
        let params = Params::<f64>::zeros(&config);
        let sin = SinusoidTable::new(config.d_model, config.max_offset).unwrap();
        let st = Styler::new(&params, &config, &sin);
        let cfg = TransferConfig { s_src: 2, ..Default::default() };
        assert!(st.transfer(&[4, 5], &cfg).is_err());
        assert!(st.transfer(&[], &TransferConfig::default()).is_err());

        let l2r = ModelConfig { l2r: true, ..tiny() };
        let zp = Params::<f64>::zeros(&l2r);
        let st2 = Styler::new(&zp, &l2r, &sin);
        assert!(st2.transfer(&[4, 5], &TransferConfig::default()).is_err());
    }
}
