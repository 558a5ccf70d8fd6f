//! Synthetic corpora with controllable structure.
//!
//! Articles are built from per-topic sentence templates: every sentence of a
//! topic opens with the topic word and continues with words owned by one of
//! the topic's template variants, closed by the sentence delimiter. Topics
//! never share content words, so a sentence spliced in from another article
//! is lexically detectable, and with a single variant per topic every
//! sentence is a deterministic function of its topic — deleted subsequences
//! become exactly recoverable from context.

use rand::Rng;

use crate::numerics::SeedRng;

/// Surface form of the sentence boundary token.
pub const SENTENCE_DELIM: &str = ".";

/// Template-based article generator.
#[derive(Debug, Clone)]
pub struct ArticleGrammar {
    /// Number of disjoint topics.
    pub n_topics: usize,
    /// Sentence templates per topic; 1 makes each topic fully deterministic.
    pub variants_per_topic: usize,
    /// Content words per sentence, delimiter excluded (first is the topic
    /// opener).
    pub sentence_len: usize,
    /// Sentences per generated article.
    pub sentences_per_article: usize,
}

impl Default for ArticleGrammar {
    fn default() -> Self {
        ArticleGrammar {
            n_topics: 8,
            variants_per_topic: 2,
            sentence_len: 5,
            sentences_per_article: 6,
        }
    }
}

impl ArticleGrammar {
    fn word(&self, topic: usize, variant: usize, slot: usize) -> String {
        if slot == 0 {
            format!("t{topic}")
        } else {
            format!("t{topic}v{variant}w{slot}")
        }
    }

    fn sentence(&self, topic: usize, variant: usize, out: &mut Vec<String>) {
        for slot in 0..self.sentence_len {
            out.push(self.word(topic, variant, slot));
        }
        out.push(SENTENCE_DELIM.to_string());
    }

    /// One article: a topic drawn at random, then independently drawn
    /// template variants for each sentence.
    pub fn article(&self, rng: &mut SeedRng) -> Vec<String> {
        let topic = rng.gen_range(0..self.n_topics);
        let mut words = Vec::new();
        for _ in 0..self.sentences_per_article {
            let variant = rng.gen_range(0..self.variants_per_topic);
            self.sentence(topic, variant, &mut words);
        }
        words
    }

    /// Generates `n` articles as whitespace-joined lines.
    pub fn generate(&self, n: usize, rng: &mut SeedRng) -> Vec<String> {
        (0..n).map(|_| self.article(rng).join(" ")).collect()
    }

    /// Every surface form the grammar can emit, delimiter included.
    pub fn lexicon(&self) -> Vec<String> {
        let mut words = vec![SENTENCE_DELIM.to_string()];
        for t in 0..self.n_topics {
            words.push(self.word(t, 0, 0));
            for v in 0..self.variants_per_topic {
                for k in 1..self.sentence_len {
                    words.push(self.word(t, v, k));
                }
            }
        }
        words
    }
}

/// Two-style sentence generator: shared frames with one style-bearing slot.
///
/// A sentence is `f{i}a f{i}b <style word> f{i}c .` — the frame words carry
/// no style, the third slot is drawn from the lexicon of the line's style.
#[derive(Debug, Clone)]
pub struct StyleGrammar {
    /// Number of shared sentence frames.
    pub n_frames: usize,
    /// Lexicon size per style.
    pub words_per_style: usize,
}

impl Default for StyleGrammar {
    fn default() -> Self {
        StyleGrammar { n_frames: 4, words_per_style: 3 }
    }
}

impl StyleGrammar {
    fn style_word(&self, style: usize, k: usize) -> String {
        let tag = if style == 0 { "pos" } else { "neg" };
        format!("{tag}{k}")
    }

    /// The style-bearing surface forms of one style.
    pub fn style_lexicon(&self, style: usize) -> Vec<String> {
        (0..self.words_per_style)
            .map(|k| self.style_word(style, k))
            .collect()
    }

    /// One labeled sentence.
    pub fn sentence(&self, style: usize, rng: &mut SeedRng) -> Vec<String> {
        let f = rng.gen_range(0..self.n_frames);
        let k = rng.gen_range(0..self.words_per_style);
        vec![
            format!("f{f}a"),
            format!("f{f}b"),
            self.style_word(style, k),
            format!("f{f}c"),
            SENTENCE_DELIM.to_string(),
        ]
    }

    /// Generates `n` labeled lines, alternating styles.
    pub fn generate(&self, n: usize, rng: &mut SeedRng) -> Vec<(String, usize)> {
        (0..n)
            .map(|i| {
                let style = i % 2;
                (self.sentence(style, rng).join(" "), style)
            })
            .collect()
    }
}
