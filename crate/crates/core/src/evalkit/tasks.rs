//! Post-editing task construction over tokenized documents.
//!
//! Tasks are built from word-level documents and serialized as JSON lines,
//! one instance per line, so task files stay independent of any particular
//! model checkpoint; evaluation maps words onto a vocabulary later.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::corpus::SENTENCE_DELIM;
use crate::numerics::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Locate,
    Infill,
    Delete,
    Transfer,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Locate => "locate",
            TaskKind::Infill => "infill",
            TaskKind::Delete => "delete",
            TaskKind::Transfer => "transfer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "locate" => Ok(TaskKind::Locate),
            "infill" => Ok(TaskKind::Infill),
            "delete" => Ok(TaskKind::Delete),
            "transfer" => Ok(TaskKind::Transfer),
            other => Err(Error::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

/// Word-level documents, optionally labeled with a style per document.
#[derive(Debug, Clone)]
pub struct EvalCorpus {
    pub docs: Vec<Vec<String>>,
    pub labels: Option<Vec<usize>>,
}

impl EvalCorpus {
    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Self {
        let docs = lines
            .into_iter()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect();
        EvalCorpus { docs, labels: None }
    }

    pub fn from_labeled<'a>(lines: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let (docs, labels) = lines
            .into_iter()
            .map(|(l, s)| {
                let words: Vec<String> =
                    l.split_whitespace().map(str::to_string).collect();
                (words, s)
            })
            .unzip();
        EvalCorpus { docs, labels: Some(labels) }
    }
}

/// One evaluation instance; spans and positions index the `input` words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskInstance {
    /// A subsequence was deleted at gap `truth`; pick it out of `candidates`.
    Locate {
        id: String,
        input: Vec<String>,
        candidates: Vec<usize>,
        truth: usize,
    },
    /// Reconstruct the words deleted at `position`.
    Infill {
        id: String,
        input: Vec<String>,
        position: usize,
        truth: Vec<String>,
    },
    /// One candidate sentence span was spliced in from another document.
    Delete {
        id: String,
        input: Vec<String>,
        candidates: Vec<(usize, usize)>,
        truth: (usize, usize),
        home_doc: usize,
        alien_doc: usize,
    },
    /// Rewrite the input from style `s_src` into style `s_tgt`.
    Transfer {
        id: String,
        input: Vec<String>,
        s_src: usize,
        s_tgt: usize,
    },
}

impl TaskInstance {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskInstance::Locate { .. } => TaskKind::Locate,
            TaskInstance::Infill { .. } => TaskKind::Infill,
            TaskInstance::Delete { .. } => TaskKind::Delete,
            TaskInstance::Transfer { .. } => TaskKind::Transfer,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            TaskInstance::Locate { id, .. }
            | TaskInstance::Infill { id, .. }
            | TaskInstance::Delete { id, .. }
            | TaskInstance::Transfer { id, .. } => id,
        }
    }

    pub fn input(&self) -> &[String] {
        match self {
            TaskInstance::Locate { input, .. }
            | TaskInstance::Infill { input, .. }
            | TaskInstance::Delete { input, .. }
            | TaskInstance::Transfer { input, .. } => input,
        }
    }
}

/// Half-open word spans of the sentences in `doc`; each span includes its
/// trailing delimiter, and a trailing undelimited fragment counts as a
/// sentence of its own.
pub fn sentence_spans(doc: &[String]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (k, w) in doc.iter().enumerate() {
        if w == SENTENCE_DELIM {
            spans.push((start, k + 1));
            start = k + 1;
        }
    }
    if start < doc.len() {
        spans.push((start, doc.len()));
    }
    spans
}

/// Longest deletion a locate/infill instance may carve out of the middle
/// sentence.
pub const MAX_DELETED_SPAN: usize = 4;

struct SentenceIndex {
    spans: Vec<Vec<(usize, usize)>>,
}

impl SentenceIndex {
    fn new(corpus: &EvalCorpus) -> Self {
        SentenceIndex {
            spans: corpus.docs.iter().map(|d| sentence_spans(d)).collect(),
        }
    }

    fn docs_with_at_least(&self, n_sentences: usize) -> Vec<usize> {
        (0..self.spans.len())
            .filter(|&d| self.spans[d].len() >= n_sentences)
            .collect()
    }
}

/// The common construction behind locate and infill: a three-sentence
/// window whose middle sentence loses a random subsequence.
struct DamagedWindow {
    input: Vec<String>,
    gap: usize,
    deleted: Vec<String>,
}

fn damage_window(
    corpus: &EvalCorpus,
    index: &SentenceIndex,
    eligible: &[usize],
    rng: &mut SeedRng,
) -> DamagedWindow {
    let doc = eligible[rng.gen_range(0..eligible.len())];
    let spans = &index.spans[doc];
    let ws = rng.gen_range(0..=spans.len() - 3);
    let window = &corpus.docs[doc][spans[ws].0..spans[ws + 2].1];
    let len = rng.gen_range(1..=MAX_DELETED_SPAN.min(window.len() - 1));
    let start = rng.gen_range(0..=window.len() - len);
    let mut input = window[..start].to_vec();
    input.extend_from_slice(&window[start + len..]);
    DamagedWindow {
        input,
        gap: start,
        deleted: window[start..start + len].to_vec(),
    }
}

/// Number of insertion-gap candidates a locate instance offers.
pub const LOCATE_CANDIDATES: usize = 5;
/// Number of sentence-span candidates a delete instance offers.
pub const DELETE_CANDIDATES: usize = 3;
/// Sentences in a delete instance's window.
const DELETE_WINDOW: usize = 5;

/// Generates `n` deterministic task instances of one kind.
///
/// Locate and infill need documents of at least three sentences, delete at
/// least five plus a second document to borrow the alien sentence from, and
/// transfer a labeled corpus with at least two distinct styles.
pub fn gen_tasks(
    corpus: &EvalCorpus,
    kind: TaskKind,
    n: usize,
    rng: &mut SeedRng,
) -> Result<Vec<TaskInstance>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let index = SentenceIndex::new(corpus);
    let mut out = Vec::with_capacity(n);
    match kind {
        TaskKind::Locate => {
            let eligible = index.docs_with_at_least(3);
            if eligible.is_empty() {
                return Err(Error::Corpus(
                    "locate tasks need documents of at least 3 sentences".into(),
                ));
            }
            for k in 0..n {
                let dw = damage_window(corpus, &index, &eligible, rng);
                let truth = dw.gap;
                let mut pool: Vec<usize> =
                    (0..=dw.input.len()).filter(|&g| g != truth).collect();
                if pool.len() < LOCATE_CANDIDATES - 1 {
                    return Err(Error::Corpus(format!(
                        "a {}-word window cannot offer {LOCATE_CANDIDATES} gaps",
                        dw.input.len()
                    )));
                }
                pool.shuffle(rng);
                let mut candidates: Vec<usize> = pool
                    .into_iter()
                    .take(LOCATE_CANDIDATES - 1)
                    .chain(std::iter::once(truth))
                    .collect();
                candidates.sort_unstable();
                out.push(TaskInstance::Locate {
                    id: format!("locate-{k:05}"),
                    input: dw.input,
                    candidates,
                    truth,
                });
            }
        }
        TaskKind::Infill => {
            let eligible = index.docs_with_at_least(3);
            if eligible.is_empty() {
                return Err(Error::Corpus(
                    "infill tasks need documents of at least 3 sentences".into(),
                ));
            }
            for k in 0..n {
                let dw = damage_window(corpus, &index, &eligible, rng);
                out.push(TaskInstance::Infill {
                    id: format!("infill-{k:05}"),
                    input: dw.input,
                    position: dw.gap,
                    truth: dw.deleted,
                });
            }
        }
        TaskKind::Delete => {
            let homes = index.docs_with_at_least(DELETE_WINDOW);
            if homes.is_empty() || corpus.docs.len() < 2 {
                return Err(Error::Corpus(
                    "delete tasks need a 5-sentence document plus a second document".into(),
                ));
            }
            for k in 0..n {
                let home = homes[rng.gen_range(0..homes.len())];
                let spans = &index.spans[home];
                let ws = rng.gen_range(0..=spans.len() - DELETE_WINDOW);
                let alien_pos = rng.gen_range(1..=DELETE_CANDIDATES);
                let mut alien_doc = rng.gen_range(0..corpus.docs.len() - 1);
                if alien_doc >= home {
                    alien_doc += 1;
                }
                let alien_spans = &index.spans[alien_doc];
                let (as_, ae) = alien_spans[rng.gen_range(0..alien_spans.len())];
                let alien = &corpus.docs[alien_doc][as_..ae];

                let mut input = Vec::new();
                let mut candidates = Vec::new();
                let mut truth = (0, 0);
                for w in 0..DELETE_WINDOW {
                    let words: &[String] = if w == alien_pos {
                        alien
                    } else {
                        let (s, e) = spans[ws + w];
                        &corpus.docs[home][s..e]
                    };
                    let start = input.len();
                    input.extend_from_slice(words);
                    if (1..=DELETE_CANDIDATES).contains(&w) {
                        candidates.push((start, input.len()));
                    }
                    if w == alien_pos {
                        truth = (start, input.len());
                    }
                }
                out.push(TaskInstance::Delete {
                    id: format!("delete-{k:05}"),
                    input,
                    candidates,
                    truth,
                    home_doc: home,
                    alien_doc,
                });
            }
        }
        TaskKind::Transfer => {
            let labels = corpus.labels.as_ref().ok_or_else(|| {
                Error::Corpus("transfer tasks need a style-labeled corpus".into())
            })?;
            if labels.len() != corpus.docs.len() {
                return Err(Error::Corpus("one style label per document required".into()));
            }
            let mut styles: Vec<usize> = labels.clone();
            styles.sort_unstable();
            styles.dedup();
            if styles.len() < 2 {
                return Err(Error::Corpus(
                    "transfer tasks need at least two distinct styles".into(),
                ));
            }
            let nonempty: Vec<usize> =
                (0..corpus.docs.len()).filter(|&d| !corpus.docs[d].is_empty()).collect();
            if nonempty.is_empty() {
                return Err(Error::Corpus("transfer tasks need non-empty documents".into()));
            }
            for k in 0..n {
                let doc = nonempty[rng.gen_range(0..nonempty.len())];
                let s_src = labels[doc];
                let others: Vec<usize> =
                    styles.iter().copied().filter(|&s| s != s_src).collect();
                let s_tgt = others[rng.gen_range(0..others.len())];
                out.push(TaskInstance::Transfer {
                    id: format!("transfer-{k:05}"),
                    input: corpus.docs[doc].clone(),
                    s_src,
                    s_tgt,
                });
            }
        }
    }
    Ok(out)
}

/// Writes one JSON object per line.
pub fn write_tasks(w: &mut impl Write, tasks: &[TaskInstance]) -> Result<()> {
    for t in tasks {
        let line = serde_json::to_string(t)
            .map_err(|e| Error::Corpus(format!("cannot serialize task {}: {e}", t.id())))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<tasks>", e))?;
    }
    Ok(())
}

/// Reads a JSON-lines task file; blank lines are skipped.
pub fn read_tasks(r: impl BufRead) -> Result<Vec<TaskInstance>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<tasks>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TaskInstance = serde_json::from_str(&line)
            .map_err(|e| Error::Corpus(format!("task line {}: {e}", k + 1)))?;
        out.push(t);
    }
    Ok(out)
}
