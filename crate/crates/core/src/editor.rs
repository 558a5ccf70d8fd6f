//! Post-editing operations on top of a trained model.
//!
//! Every operation reduces to the insertion estimate: the probability of a
//! token sequence `y` standing between a left and a right context, scored
//! token by token with the end-of-insertion marker closing the product.
//! Spans are half-open `x[i..j]`; an insertion point is the empty span
//! `i == j`.

use crate::encoding::{style_id, EOI};
use crate::error::{Error, Result};
use crate::model::{
    decode, ContextCache, DecodeMode, DecodeOutcome, DecodeSession, ModelConfig, Params,
};
use crate::numerics::{to_f64, Scalar, SeedRng};
use crate::positional::SinusoidTable;

/// The scored probability of one insertion.
///
/// `per_token_logprobs` lists the span tokens in order, then the
/// end-of-insertion marker (the marker entry is absent in left-to-right
/// mode, which has no stop event); `total_logprob` is their sum.
#[derive(Debug, Clone)]
pub struct InsertionEstimate {
    pub total_logprob: f64,
    pub per_token_logprobs: Vec<f64>,
    /// The half-open span of `x` the estimate replaces.
    pub span: (usize, usize),
    pub style: Option<usize>,
}

impl InsertionEstimate {
    /// `exp(-total / n)` over the `n` scored slots.
    pub fn perplexity(&self) -> f64 {
        let n = self.per_token_logprobs.len();
        assert!(n >= 1, "an insertion estimate always scores at least one slot");
        (-self.total_logprob / n as f64).exp()
    }
}

/// How [`Editor::delete_rank`] orders candidate spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeleteStrategy {
    /// Highest ratio of span perplexity to stop perplexity under the same
    /// contexts (in left-to-right mode: the widened-span ratio).
    Ratio,
    /// Lowest whole-sequence perplexity after actually deleting the span.
    Rank,
}

/// Editing operations over one trained model. All methods are read-only;
/// each builds its own context caches.
pub struct Editor<'a, F: Scalar> {
    params: &'a Params<F>,
    config: &'a ModelConfig,
    sinusoid: &'a SinusoidTable<F>,
}

impl<'a, F: Scalar> Editor<'a, F> {
    pub fn new(
        params: &'a Params<F>,
        config: &'a ModelConfig,
        sinusoid: &'a SinusoidTable<F>,
    ) -> Self {
        Editor { params, config, sinusoid }
    }

    fn check_span(&self, x: &[u32], i: usize, j: usize) -> Result<()> {
        if i > j || j > x.len() {
            return Err(Error::Contract(format!(
                "span {i}..{j} out of range for a sequence of {} tokens",
                x.len()
            )));
        }
        Ok(())
    }

    fn right_context(&self, x: &[u32], j: usize, style: Option<usize>) -> Result<Vec<u32>> {
        let mut right = x[j..].to_vec();
        if let Some(s) = style {
            if s >= self.config.num_styles {
                return Err(Error::Contract(format!(
                    "style {s} outside the model's {} classes",
                    self.config.num_styles
                )));
            }
            right.push(style_id(s));
        }
        Ok(right)
    }

    fn cache_at(
        &self,
        x: &[u32],
        i: usize,
        j: usize,
        style: Option<usize>,
        l2r_span_len: Option<usize>,
    ) -> Result<ContextCache<F>> {
        self.check_span(x, i, j)?;
        let right = self.right_context(x, j, style)?;
        ContextCache::build(
            self.params,
            self.config,
            self.sinusoid,
            &x[..i],
            &right,
            l2r_span_len,
        )
    }

    /// Scores inserting `y` between `x[..i]` and `x[j..]` (replacing
    /// `x[i..j]`), one incremental step per token plus the marker step.
    pub fn estimate_insertion(
        &self,
        x: &[u32],
        i: usize,
        j: usize,
        y: &[u32],
        style: Option<usize>,
    ) -> Result<InsertionEstimate> {
        if self.config.l2r && y.is_empty() {
            return Err(Error::Contract(
                "left-to-right scoring needs a non-empty span".into(),
            ));
        }
        for &tok in y {
            if tok as usize >= self.config.vocab_size {
                return Err(Error::OutOfVocab(format!(
                    "token id {tok} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
        }
        let l2r_len = if self.config.l2r { Some(y.len()) } else { None };
        let cache = self.cache_at(x, i, j, style, l2r_len)?;
        let mut session = DecodeSession::new(&cache, self.params, self.config, self.sinusoid);
        let mut per = Vec::with_capacity(y.len() + 1);
        for &tok in y {
            let lp = session.next_log_probs();
            per.push(to_f64(lp[tok as usize]));
            session.push(tok)?;
        }
        if !self.config.l2r {
            per.push(to_f64(session.next_log_probs()[EOI as usize]));
        }
        Ok(InsertionEstimate {
            total_logprob: per.iter().sum(),
            per_token_logprobs: per,
            span: (i, j),
            style,
        })
    }

    /// Log-probability score of one candidate gap: the stop probability
    /// there, or in left-to-right mode the straddling bigram's probability
    /// (`+inf` for boundary gaps, which that mode cannot score).
    fn gap_score(&self, x: &[u32], g: usize) -> Result<f64> {
        if self.config.l2r {
            if g == 0 || g == x.len() {
                return Ok(f64::INFINITY);
            }
            Ok(self
                .estimate_insertion(x, g - 1, g + 1, &x[g - 1..=g], None)?
                .total_logprob)
        } else {
            Ok(self.estimate_insertion(x, g, g, &[], None)?.total_logprob)
        }
    }

    /// Scores every candidate gap of `x` (all of `0..=|x|` when
    /// `candidates` is `None`). Lower means more in need of an insertion.
    pub fn locate_scores(
        &self,
        x: &[u32],
        candidates: Option<&[usize]>,
    ) -> Result<Vec<(usize, f64)>> {
        if x.is_empty() {
            return Err(Error::Contract("cannot locate in an empty sequence".into()));
        }
        let gaps: Vec<usize> = match candidates {
            Some(c) => c.to_vec(),
            None => (0..=x.len()).collect(),
        };
        if gaps.is_empty() {
            return Err(Error::Contract("locate needs at least one candidate gap".into()));
        }
        let mut scores = Vec::with_capacity(gaps.len());
        for &g in &gaps {
            if g > x.len() {
                return Err(Error::Contract(format!(
                    "candidate gap {g} out of range for a sequence of {} tokens",
                    x.len()
                )));
            }
            scores.push((g, self.gap_score(x, g)?));
        }
        Ok(scores)
    }

    /// The gap most in need of an insertion: the candidate whose stop (or
    /// bigram) probability is lowest, ties to the lowest index.
    pub fn locate(&self, x: &[u32], candidates: Option<&[usize]>) -> Result<usize> {
        let scores = self.locate_scores(x, candidates)?;
        let best = scores
            .iter()
            .filter(|(_, s)| s.is_finite())
            .fold(None::<(usize, f64)>, |acc, &(g, s)| match acc {
                Some((_, bs)) if s >= bs => acc,
                _ => Some((g, s)),
            });
        match best {
            Some((g, _)) => Ok(g),
            None => Err(Error::Contract(
                "no scorable candidate gaps (left-to-right mode cannot score sequence boundaries)"
                    .into(),
            )),
        }
    }

    /// `q(y | contexts) / q(x[i..j] | contexts)`: how much likelier the
    /// replacement is than what currently fills the span.
    pub fn replace_odds(
        &self,
        x: &[u32],
        i: usize,
        j: usize,
        y: &[u32],
        style: Option<usize>,
    ) -> Result<f64> {
        let num = self.estimate_insertion(x, i, j, y, style)?;
        let den = self.estimate_insertion(x, i, j, &x[i..j], style)?;
        Ok((num.total_logprob - den.total_logprob).exp())
    }

    /// Perplexity of the whole sequence as one insertion into empty
    /// contexts (terminated by the marker; in left-to-right mode the plain
    /// per-token perplexity).
    pub fn whole_sequence_perplexity(&self, x: &[u32]) -> Result<f64> {
        Ok(self.estimate_insertion(&[], 0, 0, x, None)?.perplexity())
    }

    /// Picks the candidate span most worth deleting. `Ratio` takes the
    /// argmax of its perplexity ratio; `Rank` deletes each candidate and
    /// takes the argmin of the remaining sequence's perplexity. Ties break
    /// to the earliest candidate.
    pub fn delete_rank(
        &self,
        x: &[u32],
        candidates: &[(usize, usize)],
        strategy: DeleteStrategy,
    ) -> Result<(usize, usize)> {
        if candidates.is_empty() {
            return Err(Error::Contract("delete needs at least one candidate span".into()));
        }
        let mut best: Option<((usize, usize), f64)> = None;
        for &(s, e) in candidates {
            self.check_span(x, s, e)?;
            if s == e {
                return Err(Error::Contract(format!(
                    "cannot rank the empty span {s}..{e} for deletion"
                )));
            }
            let score = match strategy {
                DeleteStrategy::Ratio => {
                    if self.config.l2r {
                        if s == 0 || e == x.len() {
                            return Err(Error::Contract(format!(
                                "widened span for {s}..{e} runs outside the sequence"
                            )));
                        }
                        let num =
                            self.estimate_insertion(x, s - 1, e + 1, &x[s - 1..e + 1], None)?;
                        let den =
                            self.estimate_insertion(x, s - 1, e + 1, &[x[s - 1], x[e]], None)?;
                        num.perplexity() / den.perplexity()
                    } else {
                        let num = self.estimate_insertion(x, s, e, &x[s..e], None)?;
                        let den = self.estimate_insertion(x, s, e, &[], None)?;
                        num.perplexity() / den.perplexity()
                    }
                }
                DeleteStrategy::Rank => {
                    let mut rest = x[..s].to_vec();
                    rest.extend_from_slice(&x[e..]);
                    -self.whole_sequence_perplexity(&rest)?
                }
            };
            let better = match best {
                Some((_, bs)) => score > bs,
                None => true,
            };
            if better {
                best = Some(((s, e), score));
            }
        }
        Ok(best.expect("at least one candidate").0)
    }

    /// Greedily fills the gap at `i`, stopping at the marker or after
    /// `length_cap` tokens (`capped` set when cut off). In left-to-right
    /// mode, delegates to [`Editor::infill_enumerate`] with the estimate's
    /// own perplexity as the ranking criterion.
    pub fn infill(&self, x: &[u32], i: usize, length_cap: usize) -> Result<DecodeOutcome<F>> {
        if self.config.l2r {
            return self.infill_enumerate(x, i, length_cap, false);
        }
        let cache = self.cache_at(x, i, i, None, None)?;
        if length_cap == 0 {
            let session = DecodeSession::new(&cache, self.params, self.config, self.sinusoid);
            let lp = session.next_log_probs();
            let eoi = lp[EOI as usize];
            let mut max = 0;
            for (t, &v) in lp.iter().enumerate() {
                if v > lp[max] {
                    max = t;
                }
            }
            return Ok(DecodeOutcome {
                tokens: Vec::new(),
                token_log_probs: vec![eoi],
                capped: max != EOI as usize,
            });
        }
        let capped_config = ModelConfig {
            max_decode_len: length_cap,
            ..self.config.clone()
        };
        let mut session = DecodeSession::new(&cache, self.params, &capped_config, self.sinusoid);
        let mut rng = SeedRng::new(0);
        decode(&mut session, &DecodeMode::Greedy, &mut rng, false)
    }

    /// Left-to-right infilling: greedily decodes one candidate per assumed
    /// length `1..=max_len`, then returns the candidate with the lowest
    /// estimate perplexity, or — with `rank_by_whole` — the lowest
    /// whole-sequence perplexity after actually inserting it.
    pub fn infill_enumerate(
        &self,
        x: &[u32],
        i: usize,
        max_len: usize,
        rank_by_whole: bool,
    ) -> Result<DecodeOutcome<F>> {
        if !self.config.l2r {
            return Err(Error::Contract(
                "length enumeration is the left-to-right fallback; this model stops by itself"
                    .into(),
            ));
        }
        if max_len == 0 {
            return Err(Error::Contract("length enumeration needs a positive cap".into()));
        }
        self.check_span(x, i, i)?;
        let mut best: Option<(DecodeOutcome<F>, f64)> = None;
        for len in 1..=max_len {
            let cache = self.cache_at(x, i, i, None, Some(len))?;
            let mut session = DecodeSession::new(&cache, self.params, self.config, self.sinusoid);
            let mut tokens = Vec::with_capacity(len);
            let mut lps = Vec::with_capacity(len);
            for _ in 0..len {
                let lp = session.next_log_probs();
                let mut pick = 0;
                for (t, &v) in lp.iter().enumerate() {
                    if t != EOI as usize && v > lp[pick] {
                        pick = t;
                    }
                }
                lps.push(lp[pick]);
                session.push(pick as u32)?;
                tokens.push(pick as u32);
            }
            let total: f64 = lps.iter().map(|&v| to_f64(v)).sum();
            let score = if rank_by_whole {
                let mut whole = x[..i].to_vec();
                whole.extend_from_slice(&tokens);
                whole.extend_from_slice(&x[i..]);
                self.whole_sequence_perplexity(&whole)?
            } else {
                (-total / len as f64).exp()
            };
            let better = match &best {
                Some((_, bs)) => score < *bs,
                None => true,
            };
            if better {
                best = Some((
                    DecodeOutcome { tokens, token_log_probs: lps, capped: false },
                    score,
                ));
            }
        }
        Ok(best.expect("at least one length").0)
    }
}
