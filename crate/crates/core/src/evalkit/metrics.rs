//! Evaluation metrics: BLEU, position accuracy, and the style G-score.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The order of the highest n-gram BLEU counts.
const BLEU_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash + Clone>(xs: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if xs.len() >= n {
        for w in xs.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Add-one smoothed log-precisions of orders 1..=4, hypothesis n-gram counts
/// clipped by the reference.
fn log_precisions<T: Eq + Hash + Clone>(hyp: &[T], rf: &[T]) -> Vec<f64> {
    (1..=BLEU_ORDER)
        .map(|n| {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(rf, n);
            let matched: usize = h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum();
            let total = hyp.len().saturating_sub(n - 1);
            (((matched + 1) as f64) / ((total + 1) as f64)).ln()
        })
        .collect()
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Sentence-level BLEU-4 in percent: add-one smoothed n-gram precisions
/// under a brevity penalty. An empty hypothesis scores zero; an empty
/// reference is an error.
pub fn sentence_bleu<T: Eq + Hash + Clone>(hyp: &[T], rf: &[T]) -> Result<f64> {
    if rf.is_empty() {
        return Err(Error::Contract("BLEU needs a non-empty reference".into()));
    }
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let mean_log: f64 =
        log_precisions(hyp, rf).iter().sum::<f64>() / BLEU_ORDER as f64;
    Ok(100.0 * brevity_penalty(hyp.len(), rf.len()) * mean_log.exp())
}

/// Corpus-level BLEU-4 in percent: per-order log-precisions averaged over
/// the pairs, brevity penalty from aggregate lengths.
pub fn corpus_bleu<T: Eq + Hash + Clone>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("corpus BLEU needs at least one pair".into()));
    }
    let mut sums = [0.0f64; BLEU_ORDER];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (hyp, rf) in pairs {
        if rf.is_empty() {
            return Err(Error::Contract("BLEU needs a non-empty reference".into()));
        }
        hyp_len += hyp.len();
        ref_len += rf.len();
        for (s, lp) in sums.iter_mut().zip(log_precisions(hyp, rf)) {
            *s += lp;
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mean_log =
        sums.iter().map(|s| s / pairs.len() as f64).sum::<f64>() / BLEU_ORDER as f64;
    Ok(100.0 * brevity_penalty(hyp_len, ref_len) * mean_log.exp())
}

/// Geometric mean of style accuracy and BLEU, both in percent.
pub fn g_score(style_acc: f64, bleu: f64) -> Result<f64> {
    for v in [style_acc, bleu] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::Contract(format!("{v} is not a percentage")));
        }
    }
    Ok((style_acc * bleu).sqrt())
}

/// Aggregate metrics of one evaluation run; fields not measured by the task
/// kind stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub bleu: Option<f64>,
    pub style_accuracy: Option<f64>,
    pub g_score: Option<f64>,
    pub n_instances: usize,
}

impl MetricsReport {
    pub fn empty() -> Self {
        MetricsReport {
            accuracy: None,
            bleu: None,
            style_accuracy: None,
            g_score: None,
            n_instances: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_sequences_score_exactly_one_hundred() {
        assert_eq!(sentence_bleu(&words("a b c d"), &words("a b c d")).unwrap(), 100.0);
        assert_eq!(sentence_bleu(&words("a"), &words("a")).unwrap(), 100.0);
    }

    #[test]
    fn one_substitution_in_four_tokens_matches_the_ngram_oracle() {
        let b = sentence_bleu(&words("a b c d"), &words("a b c e")).unwrap();
        assert!((b - 66.8740304976).abs() < 1e-3, "got {b}");
    }

    #[test]
    fn short_hypotheses_pay_the_brevity_penalty() {
        let b = sentence_bleu(&words("a b"), &words("a b c d")).unwrap();
        assert!((b - 36.7879441171).abs() < 1e-3, "got {b}");
    }

    #[test]
    fn non_identical_sequences_score_below_one_hundred() {
        for (h, r) in [
            ("a b c d x", "a b c d"),
            ("a b c d", "a b c d x"),
            ("a b c d", "d c b a"),
            ("x", "a"),
        ] {
            let b = sentence_bleu(&words(h), &words(r)).unwrap();
            assert!(b < 100.0, "{h} vs {r} scored {b}");
        }
    }

    #[test]
    fn empty_hypothesis_scores_zero_and_empty_reference_errors() {
        assert_eq!(sentence_bleu::<&str>(&[], &words("a")).unwrap(), 0.0);
        assert!(sentence_bleu::<&str>(&words("a"), &[]).is_err());
    }

    #[test]
    fn hypothesis_and_reference_roles_are_not_symmetric() {
        let ab = sentence_bleu(&words("a b"), &words("a b c d")).unwrap();
        let ba = sentence_bleu(&words("a b c d"), &words("a b")).unwrap();
        assert_ne!(ab, ba);
    }

    #[test]
    fn corpus_bleu_averages_log_precisions_and_pools_lengths() {
        let pairs = vec![
            (words("a b c d"), words("a b c d")),
            (words("a b c d"), words("a b c e")),
        ];
        let c = corpus_bleu(&pairs).unwrap();
        let lo = sentence_bleu(&words("a b c d"), &words("a b c e")).unwrap();
        assert!(c > lo && c < 100.0, "got {c}");
        let identical = vec![(words("a b"), words("a b")); 3];
        assert_eq!(corpus_bleu(&identical).unwrap(), 100.0);
        assert!(corpus_bleu::<&str>(&[]).is_err());
    }

    #[test]
    fn g_score_matches_the_published_check_and_its_edges() {
        let g = g_score(97.9, 22.68).unwrap();
        assert!((g - 47.1).abs() < 0.1, "got {g}");
        assert_eq!(g_score(0.0, 55.0).unwrap(), 0.0);
        assert_eq!(g_score(100.0, 100.0).unwrap(), 100.0);
        assert!(g_score(101.0, 5.0).is_err());
        assert!(g_score(5.0, -0.1).is_err());
    }
}
