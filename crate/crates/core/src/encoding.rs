//! Token ids, vocabulary handling and composed-sequence construction.
//!
//! Documents are whitespace-tokenized. A fixed block of reserved ids comes
//! first: padding, the unknown token, the end-of-insertion marker, the
//! classification slot and one id per style. Corpus words follow, ordered by
//! descending count and then lexicographically, so builds are reproducible.
//!
//! Composition turns a document plus a token interval into the flat layout
//! the model consumes: left context, span tokens, the end-of-insertion
//! marker, right context, then optional style and classification slots.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::SeedRng;
use crate::positional::SpanLayout;
use rand::Rng;

/// Padding id, only ever used to square off storage.
pub const PAD: u32 = 0;
/// Unknown-word id; also what reserved surface forms map to in raw text.
pub const UNK: u32 = 1;
/// End-of-insertion marker id.
pub const EOI: u32 = 2;
/// Classification slot id.
pub const CLS: u32 = 3;
/// First style id; style `s` lives at `STYLE_BASE + s`.
pub const STYLE_BASE: u32 = 4;

/// Id of the style token for style index `s`.
pub fn style_id(s: usize) -> u32 {
    STYLE_BASE + s as u32
}

fn reserved_name(id: u32) -> Option<String> {
    match id {
        PAD => Some("<pad>".into()),
        UNK => Some("<unk>".into()),
        EOI => Some("<eoi>".into()),
        CLS => Some("<cls>".into()),
        _ => None,
    }
}

fn style_name(s: usize) -> String {
    format!("<style{s}>")
}

/// Whitespace-token vocabulary with a reserved-id prefix.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    num_styles: usize,
}

impl Vocabulary {
    /// Builds a vocabulary over the given lines. Words that collide with a
    /// reserved surface form are dropped (they tokenize to the unknown id).
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, num_styles: usize) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for line in lines {
            for word in line.split_whitespace() {
                *counts.entry(word).or_default() += 1;
            }
        }
        let mut tokens = Self::reserved_block(num_styles);
        let reserved: Vec<String> = tokens.clone();
        let mut words: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(w, _)| !reserved.iter().any(|r| r == w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        tokens.extend(words.into_iter().map(|(w, _)| w.to_string()));
        Self::from_tokens(tokens, num_styles)
    }

    fn reserved_block(num_styles: usize) -> Vec<String> {
        let mut tokens: Vec<String> = (0..STYLE_BASE)
            .map(|id| reserved_name(id).unwrap())
            .collect();
        tokens.extend((0..num_styles).map(style_name));
        tokens
    }

    fn from_tokens(tokens: Vec<String>, num_styles: usize) -> Self {
        let first_word = STYLE_BASE as usize + num_styles;
        let index = tokens
            .iter()
            .enumerate()
            .skip(first_word)
            .map(|(id, w)| (w.clone(), id as u32))
            .collect();
        Vocabulary { tokens, index, num_styles }
    }

    /// Total id count, reserved block included.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_styles(&self) -> usize {
        self.num_styles
    }

    /// Id for a surface form; unknown words and reserved surface forms give
    /// the unknown id.
    pub fn token_id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.token_id(w)).collect()
    }

    /// Surface form of an id.
    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::OutOfVocab(format!("id {id} of {}", self.tokens.len())))
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for (k, &id) in ids.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            out.push_str(self.token(id)?);
        }
        Ok(out)
    }

    /// Writes one token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            let _ = writeln!(text, "{t}");
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads a vocabulary written by [`Vocabulary::save`], checking the
    /// reserved prefix and inferring the style count from it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        for id in 0..STYLE_BASE {
            let want = reserved_name(id).unwrap();
            if tokens.get(id as usize) != Some(&want) {
                return Err(Error::Corpus(format!(
                    "{}: line {id} should be the reserved token {want}",
                    path.display()
                )));
            }
        }
        let mut num_styles = 0;
        while tokens.get(STYLE_BASE as usize + num_styles) == Some(&style_name(num_styles)) {
            num_styles += 1;
        }
        Ok(Self::from_tokens(tokens, num_styles))
    }
}

/// Number of token intervals a document of `n` tokens offers: all pairs
/// `i <= j` by default, or only `i < j` when singletons are excluded.
pub fn interval_count(n: usize, strict: bool) -> usize {
    if strict {
        n * n.saturating_sub(1) / 2
    } else {
        n * (n + 1) / 2
    }
}

/// Draws an interval `(i, j)`, `0 <= i <= j < n` (inclusive ends), uniformly
/// over all such pairs; with `strict` set, singletons are excluded.
pub fn sample_interval(rng: &mut SeedRng, n: usize, strict: bool) -> Result<(usize, usize)> {
    let count = interval_count(n, strict);
    if count == 0 {
        return Err(Error::Contract(format!(
            "no intervals to sample from a document of {n} tokens (strict={strict})"
        )));
    }
    let mut u = rng.gen_range(0..count);
    for i in 0..n {
        let options = n - i - usize::from(strict);
        if u < options {
            return Ok((i, i + usize::from(strict) + u));
        }
        u -= options;
    }
    unreachable!("interval index {u} exceeds count {count}");
}

/// A flat model input together with its span geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedRow {
    pub ids: Vec<u32>,
    pub layout: SpanLayout,
}

/// Lays out `left ⊕ span ⊕ marker ⊕ right`, then the style token and the
/// classification slot when requested. The span may be empty, in which case
/// the span region holds only the marker.
pub fn compose(
    left: &[u32],
    span: &[u32],
    right: &[u32],
    style: Option<usize>,
    cls: bool,
) -> ComposedRow {
    let a = left.len();
    let b = a + span.len();
    let mut ids = Vec::with_capacity(left.len() + span.len() + right.len() + 3);
    ids.extend_from_slice(left);
    ids.extend_from_slice(span);
    ids.push(EOI);
    ids.extend_from_slice(right);
    if let Some(s) = style {
        ids.push(style_id(s));
    }
    if cls {
        ids.push(CLS);
    }
    let layout = SpanLayout::new(ids.len(), a, b).expect("composed layout is valid");
    ComposedRow { ids, layout }
}

/// Lays out `left ⊕ span ⊕ right` with no marker slot, for the
/// left-to-right ablation. The last span token doubles as the region end,
/// so the span must be non-empty.
pub fn compose_l2r(
    left: &[u32],
    span: &[u32],
    right: &[u32],
    style: Option<usize>,
    cls: bool,
) -> Result<ComposedRow> {
    if span.is_empty() {
        return Err(Error::Contract(
            "left-to-right composition needs a non-empty span".into(),
        ));
    }
    let a = left.len();
    let b = a + span.len() - 1;
    let mut ids = Vec::with_capacity(left.len() + span.len() + right.len() + 2);
    ids.extend_from_slice(left);
    ids.extend_from_slice(span);
    ids.extend_from_slice(right);
    if let Some(s) = style {
        ids.push(style_id(s));
    }
    if cls {
        ids.push(CLS);
    }
    let layout = SpanLayout::new(ids.len(), a, b)?;
    Ok(ComposedRow { ids, layout })
}

/// Composes a document around the inclusive-exclusive interval
/// `start..end`, using the interval's own tokens as the span.
pub fn compose_interval(
    doc: &[u32],
    start: usize,
    end: usize,
    style: Option<usize>,
    cls: bool,
) -> Result<ComposedRow> {
    if start > end || end > doc.len() {
        return Err(Error::Contract(format!(
            "interval {start}..{end} out of range for a document of {} tokens",
            doc.len()
        )));
    }
    Ok(compose(&doc[..start], &doc[start..end], &doc[end..], style, cls))
}

/// Reads a plain corpus: one document per line, blank lines skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.to_string())
        .collect())
}

/// Reads a styled corpus: tab-separated `style<TAB>document` lines, where
/// `style` is a non-negative integer index.
pub fn load_style_corpus(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (style, doc) = line.split_once('\t').ok_or_else(|| {
            Error::Corpus(format!(
                "{}: line {}: expected style<TAB>document",
                path.display(),
                lineno + 1
            ))
        })?;
        let style: usize = style.trim().parse().map_err(|_| {
            Error::Corpus(format!(
                "{}: line {}: style {:?} is not a non-negative integer",
                path.display(),
                lineno + 1,
                style
            ))
        })?;
        docs.push((style, doc.to_string()));
    }
    Ok(docs)
}
