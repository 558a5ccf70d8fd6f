//! Run configuration: a flat `section.key = value` store with typed access.
//!
//! Every key ships with a default except the corpus path, which each command
//! demands explicitly. Files set keys line by line, flags override files,
//! and unknown keys are rejected by name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use xledit::error::{Error, Result};
use xledit::evalkit::{ArticleGrammar, StyleGrammar};
use xledit::model::ModelConfig;
use xledit::objectives::TrainConfig;
use xledit::styler::TransferConfig;

/// Every accepted key with its default and a one-line description; a `None`
/// default marks a key the user must supply.
pub const KEY_TABLE: &[(&str, Option<&str>, &str)] = &[
    ("model.n_layers", Some("4"), "transformer layers"),
    ("model.n_heads", Some("4"), "attention heads per layer"),
    ("model.d_model", Some("256"), "model width"),
    ("model.d_ff", Some("512"), "feed-forward width"),
    ("model.max_offset", Some("256"), "relative-offset clamp"),
    ("model.dropout", Some("0.1"), "training dropout rate"),
    ("model.num_styles", Some("0"), "style classes (0 disables the classifier)"),
    ("model.max_decode_len", Some("24"), "insertion decode cap"),
    ("model.l2r", Some("false"), "train the left-to-right ablation"),
    ("train.steps", Some("500"), "optimization steps"),
    ("train.batch_size", Some("8"), "documents per step"),
    ("train.lr", Some("0.0003"), "peak learning rate"),
    ("train.warmup", Some("200"), "linear warmup steps"),
    ("train.beta1", Some("0.9"), "Adam first-moment decay"),
    ("train.beta2", Some("0.999"), "Adam second-moment decay"),
    ("train.lambda_ins", Some("1.0"), "insertion loss weight"),
    ("train.lambda_cls", Some("1.0"), "style loss weight"),
    ("train.grad_clip", Some("1.0"), "global gradient-norm ceiling"),
    ("train.strict_intervals", Some("false"), "sample only non-empty training spans"),
    ("train.report_every", Some("25"), "steps between loss reports"),
    ("train.emit_timing", Some("false"), "measure tokens/s in reports (breaks byte determinism)"),
    ("train.styled", Some("false"), "corpus lines carry style<TAB>text labels"),
    ("transfer.max_span_len", Some("4"), "longest replaceable span"),
    ("transfer.v_thres", Some("2.0"), "odds threshold for an edit to fire"),
    ("transfer.max_iters", Some("10"), "edit-loop iteration cap"),
    ("transfer.biased_sampling", Some("false"), "pick the first decoded token by style contrast"),
    ("transfer.forced_insertion", Some("false"), "allow one forced insertion at position 0"),
    ("transfer.forced_insertion_conf", Some("0.9"), "classifier confidence that triggers forcing"),
    ("transfer.s_src", Some("0"), "source style id"),
    ("transfer.s_tgt", Some("1"), "target style id"),
    ("eval.mode", Some("xledit"), "estimator family: xledit|xledit_rank|l2r|l2r_rank"),
    ("eval.kind", Some("locate"), "task kind: locate|infill|delete|transfer"),
    ("eval.n", Some("200"), "instances to generate"),
    ("eval.style_words", Some(""), "comma-separated style words excluded from preservation"),
    ("grammar.n_topics", Some("8"), "article topics"),
    ("grammar.variants", Some("2"), "sentence templates per topic"),
    ("grammar.sentence_len", Some("5"), "content words per sentence"),
    ("grammar.sentences", Some("6"), "sentences per article"),
    ("grammar.articles", Some("64"), "articles in a synthetic corpus"),
    ("grammar.style_frames", Some("4"), "shared frames in the style grammar"),
    ("grammar.style_words", Some("3"), "lexicon words per style"),
    ("grammar.style_lines", Some("200"), "lines in a synthetic style corpus"),
    ("paths.corpus", None, "training/task corpus file"),
    ("paths.out", Some("out"), "output directory"),
    ("seed", Some("0"), "root random seed"),
];

/// The merged settings of one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEY_TABLE
                .iter()
                .filter_map(|(k, d, _)| d.map(|d| (k.to_string(), d.to_string())))
                .collect(),
        }
    }
}

impl RunConfig {
    /// Sets one key, rejecting names outside the table.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEY_TABLE.iter().any(|(k, _, _)| *k == key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Applies a config file: `key = value` lines, `#` comments, blank lines.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}: line {}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value).map_err(|e| {
                Error::Config(format!("{}: line {}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    pub fn str_of(&self, key: &str) -> Result<&str> {
        match self.values.get(key).map(String::as_str) {
            Some(v) => Ok(v),
            None if KEY_TABLE.iter().any(|(k, _, _)| *k == key) => {
                Err(Error::Config(format!("{key} is required but unset")))
            }
            None => Err(Error::Config(format!("unknown config key {key:?}"))),
        }
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn usize_of(&self, key: &str) -> Result<usize> {
        let v = self.str_of(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("{key} = {v:?} is not a non-negative integer")))
    }

    pub fn f64_of(&self, key: &str) -> Result<f64> {
        let v = self.str_of(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("{key} = {v:?} is not a number")))
    }

    pub fn bool_of(&self, key: &str) -> Result<bool> {
        match self.str_of(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(Error::Config(format!("{key} = {v:?} is not true or false"))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        let v = self.str_of("seed")?;
        v.parse()
            .map_err(|_| Error::Config(format!("seed = {v:?} is not a non-negative integer")))
    }

    /// Model settings with the vocabulary size filled in by the caller.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let config = ModelConfig {
            n_layers: self.usize_of("model.n_layers")?,
            n_heads: self.usize_of("model.n_heads")?,
            d_model: self.usize_of("model.d_model")?,
            d_ff: self.usize_of("model.d_ff")?,
            vocab_size,
            max_offset: self.usize_of("model.max_offset")?,
            dropout: self.f64_of("model.dropout")?,
            num_styles: self.usize_of("model.num_styles")?,
            max_decode_len: self.usize_of("model.max_decode_len")?,
            l2r: self.bool_of("model.l2r")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            steps: self.usize_of("train.steps")?,
            batch_size: self.usize_of("train.batch_size")?,
            lr: self.f64_of("train.lr")?,
            warmup: self.usize_of("train.warmup")?,
            beta1: self.f64_of("train.beta1")?,
            beta2: self.f64_of("train.beta2")?,
            lambda_ins: self.f64_of("train.lambda_ins")?,
            lambda_cls: self.f64_of("train.lambda_cls")?,
            grad_clip: self.f64_of("train.grad_clip")?,
            strict_intervals: self.bool_of("train.strict_intervals")?,
            report_every: self.usize_of("train.report_every")?,
            emit_timing: self.bool_of("train.emit_timing")?,
            seed: self.seed()?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn transfer_config(&self) -> Result<TransferConfig> {
        let config = TransferConfig {
            max_span_len: self.usize_of("transfer.max_span_len")?,
            v_thres: self.f64_of("transfer.v_thres")?,
            max_iters: self.usize_of("transfer.max_iters")?,
            biased_sampling: self.bool_of("transfer.biased_sampling")?,
            forced_insertion: self.bool_of("transfer.forced_insertion")?,
            forced_insertion_conf: self.f64_of("transfer.forced_insertion_conf")?,
            s_src: self.usize_of("transfer.s_src")?,
            s_tgt: self.usize_of("transfer.s_tgt")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn article_grammar(&self) -> Result<ArticleGrammar> {
        Ok(ArticleGrammar {
            n_topics: self.usize_of("grammar.n_topics")?,
            variants_per_topic: self.usize_of("grammar.variants")?,
            sentence_len: self.usize_of("grammar.sentence_len")?,
            sentences_per_article: self.usize_of("grammar.sentences")?,
        })
    }

    pub fn style_grammar(&self) -> Result<StyleGrammar> {
        Ok(StyleGrammar {
            n_frames: self.usize_of("grammar.style_frames")?,
            words_per_style: self.usize_of("grammar.style_words")?,
        })
    }

    /// Comma-separated style word list from `eval.style_words`.
    pub fn style_word_list(&self) -> Vec<String> {
        self.values
            .get("eval.style_words")
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|w| !w.is_empty())
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// The full key table for `--help`, one `key = default  description`
    /// line per setting.
    pub fn help_table() -> String {
        let mut out = String::new();
        for (key, default, help) in KEY_TABLE {
            let shown = match default {
                None => "(required)",
                Some("") => "(empty)",
                Some(d) => d,
            };
            let _ = writeln!(out, "  {key:<32} {shown:<10} {help}");
        }
        out
    }
}
