//! Model hyperparameters and their textual form inside checkpoints.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Architecture and decoding settings. `l2r` selects the left-to-right
/// ablation: raw offsets everywhere and no end-of-insertion marker, which
/// makes span predictions depend on the assumed span length.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_offset: usize,
    pub dropout: f64,
    pub num_styles: usize,
    pub max_decode_len: usize,
    pub l2r: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 256,
            d_ff: 512,
            vocab_size: 0,
            max_offset: 256,
            dropout: 0.1,
            num_styles: 0,
            max_decode_len: 24,
            l2r: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be even for the sinusoid table",
                self.d_model
            )));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.vocab_size == 0 {
            return Err(Error::Config(
                "n_layers, d_ff and vocab_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if self.max_decode_len == 0 {
            return Err(Error::Config("max_decode_len must be positive".into()));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Sorted `key=value` lines, the form stored in checkpoints.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let pairs = [
            ("d_ff", self.d_ff.to_string()),
            ("d_model", self.d_model.to_string()),
            ("dropout", format!("{}", self.dropout)),
            ("l2r", self.l2r.to_string()),
            ("max_decode_len", self.max_decode_len.to_string()),
            ("max_offset", self.max_offset.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("num_styles", self.num_styles.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
        ];
        for (k, v) in pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Parses the `key=value` form written by [`ModelConfig::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad config line {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |key: &str| -> Result<String> {
            map.remove(key)
                .ok_or_else(|| Error::Config(format!("config key {key} missing")))
        };
        let parse_usize = |key: &str, v: String| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("config key {key} has bad value {v:?}")))
        };
        let cfg = ModelConfig {
            d_ff: parse_usize("d_ff", take("d_ff")?)?,
            d_model: parse_usize("d_model", take("d_model")?)?,
            dropout: {
                let v = take("dropout")?;
                v.parse()
                    .map_err(|_| Error::Config(format!("config key dropout has bad value {v:?}")))?
            },
            l2r: {
                let v = take("l2r")?;
                v.parse()
                    .map_err(|_| Error::Config(format!("config key l2r has bad value {v:?}")))?
            },
            max_decode_len: parse_usize("max_decode_len", take("max_decode_len")?)?,
            max_offset: parse_usize("max_offset", take("max_offset")?)?,
            n_heads: parse_usize("n_heads", take("n_heads")?)?,
            n_layers: parse_usize("n_layers", take("n_layers")?)?,
            num_styles: parse_usize("num_styles", take("num_styles")?)?,
            vocab_size: parse_usize("vocab_size", take("vocab_size")?)?,
        };
        if let Some(extra) = map.into_keys().next() {
            return Err(Error::Config(format!("unknown config key {extra}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
