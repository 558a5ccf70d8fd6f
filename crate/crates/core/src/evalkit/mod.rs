//! Task generation, metrics, and batch evaluation of trained models.

pub mod corpus;
pub mod metrics;
pub mod tasks;

use std::collections::HashMap;

pub use corpus::{ArticleGrammar, StyleGrammar, SENTENCE_DELIM};
pub use metrics::{corpus_bleu, g_score, sentence_bleu, MetricsReport};
pub use tasks::{
    gen_tasks, read_tasks, sentence_spans, write_tasks, EvalCorpus, TaskInstance, TaskKind,
    DELETE_CANDIDATES, LOCATE_CANDIDATES, MAX_DELETED_SPAN,
};

use crate::editor::{DeleteStrategy, Editor};
use crate::encoding::{Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::model::{classify_style, ModelConfig, Params};
use crate::numerics::{to_f64, Scalar};
use crate::positional::SinusoidTable;
use crate::styler::{Styler, TransferConfig, TransferTrace};

/// A loaded model with everything needed to run it.
#[derive(Clone, Copy)]
pub struct ModelHandle<'a, F: Scalar> {
    pub params: &'a Params<F>,
    pub config: &'a ModelConfig,
    pub sinusoid: &'a SinusoidTable<F>,
}

/// Which estimator family answers the tasks, and whether deletion and
/// length enumeration rank by whole-sequence perplexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Xledit,
    XleditRank,
    L2r,
    L2rRank,
}

impl EvalMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "xledit" => Ok(EvalMode::Xledit),
            "xledit_rank" => Ok(EvalMode::XleditRank),
            "l2r" => Ok(EvalMode::L2r),
            "l2r_rank" => Ok(EvalMode::L2rRank),
            other => Err(Error::Config(format!("unknown eval mode {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Xledit => "xledit",
            EvalMode::XleditRank => "xledit_rank",
            EvalMode::L2r => "l2r",
            EvalMode::L2rRank => "l2r_rank",
        }
    }

    fn uses_l2r_model(self) -> bool {
        matches!(self, EvalMode::L2r | EvalMode::L2rRank)
    }

    fn ranks_by_whole_sequence(self) -> bool {
        matches!(self, EvalMode::XleditRank | EvalMode::L2rRank)
    }
}

fn ids_of(vocab: &Vocabulary, words: &[String]) -> Result<Vec<u32>> {
    words
        .iter()
        .map(|w| {
            let id = vocab.token_id(w);
            if id == UNK {
                Err(Error::OutOfVocab(format!("{w:?} is not in the model vocabulary")))
            } else {
                Ok(id)
            }
        })
        .collect()
}

/// Shortest length cap granted to an infill prediction.
const MIN_INFILL_CAP: usize = 10;

fn infill_cap(truth_len: usize) -> usize {
    MIN_INFILL_CAP.max(2 * truth_len)
}

/// Evaluates one homogeneous batch of locate, infill, or delete tasks.
///
/// The mode must match the checkpoint's factorization: left-to-right modes
/// drive a model trained with the length-conditioned ablation, the others
/// an insertion model. Style transfer has its own entry point with a judge.
pub fn run_eval<F: Scalar>(
    model: &ModelHandle<'_, F>,
    vocab: &Vocabulary,
    tasks: &[TaskInstance],
    mode: EvalMode,
) -> Result<MetricsReport> {
    if mode.uses_l2r_model() != model.config.l2r {
        return Err(Error::Contract(format!(
            "mode {} does not match a checkpoint with l2r={}",
            mode.name(),
            model.config.l2r
        )));
    }
    if tasks.is_empty() {
        return Ok(MetricsReport::empty());
    }
    let kind = tasks[0].kind();
    if tasks.iter().any(|t| t.kind() != kind) {
        return Err(Error::Contract("evaluation batches must hold one task kind".into()));
    }
    let editor = Editor::new(model.params, model.config, model.sinusoid);
    let mut correct = 0usize;
    let mut bleu_pairs: Vec<(Vec<u32>, Vec<u32>)> = Vec::new();
    for t in tasks {
        match t {
            TaskInstance::Locate { input, candidates, truth, .. } => {
                let ids = ids_of(vocab, input)?;
                if editor.locate(&ids, Some(candidates))? == *truth {
                    correct += 1;
                }
            }
            TaskInstance::Infill { input, position, truth, .. } => {
                let ids = ids_of(vocab, input)?;
                let truth_ids = ids_of(vocab, truth)?;
                let cap = infill_cap(truth_ids.len());
                let outcome = if model.config.l2r {
                    editor.infill_enumerate(
                        &ids,
                        *position,
                        cap,
                        mode.ranks_by_whole_sequence(),
                    )?
                } else {
                    editor.infill(&ids, *position, cap)?
                };
                if outcome.tokens == truth_ids {
                    correct += 1;
                }
                bleu_pairs.push((outcome.tokens, truth_ids));
            }
            TaskInstance::Delete { input, candidates, truth, .. } => {
                let ids = ids_of(vocab, input)?;
                let strategy = if mode.ranks_by_whole_sequence() {
                    DeleteStrategy::Rank
                } else {
                    DeleteStrategy::Ratio
                };
                if editor.delete_rank(&ids, candidates, strategy)? == *truth {
                    correct += 1;
                }
            }
            TaskInstance::Transfer { .. } => {
                return Err(Error::Contract(
                    "transfer tasks are evaluated with a judge; use the transfer runner"
                        .into(),
                ));
            }
        }
    }
    let accuracy = 100.0 * correct as f64 / tasks.len() as f64;
    let bleu = if bleu_pairs.is_empty() {
        None
    } else {
        Some(corpus_bleu(&bleu_pairs)?)
    };
    Ok(MetricsReport {
        accuracy: Some(accuracy),
        bleu,
        style_accuracy: None,
        g_score: None,
        n_instances: tasks.len(),
    })
}

/// Transfer-run aggregates beyond the headline metrics.
#[derive(Debug, Clone)]
pub struct TransferEval {
    pub report: MetricsReport,
    /// Mean executed edits per instance.
    pub mean_edits: f64,
    /// Percent of non-style input tokens that survive into the output,
    /// counted as a multiset.
    pub token_preservation: f64,
    /// Transferred word sequences, aligned with the input tasks.
    pub outputs: Vec<Vec<String>>,
    pub traces: Vec<TransferTrace>,
}

/// Runs the transfer loop over transfer tasks and grades the outputs with a
/// separately trained judge classifier sharing the vocabulary.
///
/// BLEU compares each output against its input (content retention), style
/// accuracy is the judge's agreement with the requested target style, and
/// `style_words` are excluded from the token-preservation count.
pub fn run_transfer_eval<F: Scalar>(
    model: &ModelHandle<'_, F>,
    judge: &ModelHandle<'_, F>,
    vocab: &Vocabulary,
    tasks: &[TaskInstance],
    base: &TransferConfig,
    style_words: &[String],
) -> Result<TransferEval> {
    if judge.config.num_styles < 2 {
        return Err(Error::Contract("the judge needs at least two style classes".into()));
    }
    if tasks.is_empty() {
        return Ok(TransferEval {
            report: MetricsReport::empty(),
            mean_edits: 0.0,
            token_preservation: 100.0,
            outputs: Vec::new(),
            traces: Vec::new(),
        });
    }
    let styler = Styler::new(model.params, model.config, model.sinusoid);
    let mut styled_right = 0usize;
    let mut edits = 0usize;
    let mut kept = 0usize;
    let mut keepable = 0usize;
    let mut bleu_pairs = Vec::new();
    let mut outputs = Vec::new();
    let mut traces = Vec::new();
    for t in tasks {
        let TaskInstance::Transfer { input, s_src, s_tgt, .. } = t else {
            return Err(Error::Contract("the transfer runner only takes transfer tasks".into()));
        };
        let ids = ids_of(vocab, input)?;
        let cfg = TransferConfig { s_src: *s_src, s_tgt: *s_tgt, ..base.clone() };
        let (out_ids, trace) = styler.transfer(&ids, &cfg)?;
        let out_words: Vec<String> = out_ids
            .iter()
            .map(|&id| vocab.token(id).map(str::to_string))
            .collect::<Result<_>>()?;

        let probs = classify_style(judge.params, judge.config, judge.sinusoid, &out_ids)?;
        let judged = (0..probs.len())
            .max_by(|&a, &b| to_f64(probs[a]).total_cmp(&to_f64(probs[b])))
            .expect("judge emits at least two classes");
        if judged == *s_tgt {
            styled_right += 1;
        }

        let mut out_counts: HashMap<&str, usize> = HashMap::new();
        for w in &out_words {
            *out_counts.entry(w.as_str()).or_insert(0) += 1;
        }
        for w in input {
            if style_words.contains(w) {
                continue;
            }
            keepable += 1;
            if let Some(c) = out_counts.get_mut(w.as_str()) {
                if *c > 0 {
                    *c -= 1;
                    kept += 1;
                }
            }
        }

        edits += trace.steps.len();
        bleu_pairs.push((out_words.clone(), input.clone()));
        outputs.push(out_words);
        traces.push(trace);
    }
    let n = tasks.len();
    let style_accuracy = 100.0 * styled_right as f64 / n as f64;
    let bleu = corpus_bleu(&bleu_pairs)?;
    let report = MetricsReport {
        accuracy: None,
        bleu: Some(bleu),
        style_accuracy: Some(style_accuracy),
        g_score: Some(g_score(style_accuracy, bleu)?),
        n_instances: n,
    };
    Ok(TransferEval {
        report,
        mean_edits: edits as f64 / n as f64,
        token_preservation: if keepable == 0 {
            100.0
        } else {
            100.0 * kept as f64 / keepable as f64
        },
        outputs,
        traces,
    })
}
