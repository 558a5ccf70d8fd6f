//! One module per subcommand.

pub mod edit;
pub mod eval;
pub mod gen_tasks;
pub mod offsets;
pub mod train;
pub mod transfer;

use std::path::Path;

use xledit::encoding::{Vocabulary, UNK};
use xledit::error::{Error, Result};
use xledit::model::{load_checkpoint, ModelConfig, Params};
use xledit::positional::SinusoidTable;

use crate::{CliError, CliResult, Flags};

/// Per-command help: prints and signals the caller to return cleanly.
pub fn wants_help(args: &[String]) -> bool {
    args.iter().any(|a| a == "--help")
}

/// Maps words onto ids, failing loudly on anything outside the vocabulary.
pub fn ids_of(vocab: &Vocabulary, words: impl Iterator<Item = impl AsRef<str>>) -> Result<Vec<u32>> {
    words
        .map(|w| {
            let w = w.as_ref();
            let id = vocab.token_id(w);
            if id == UNK {
                Err(Error::OutOfVocab(format!("{w:?} is not in the model vocabulary")))
            } else {
                Ok(id)
            }
        })
        .collect()
}

/// A checkpoint plus everything derived from it that commands need.
pub struct LoadedModel {
    pub config: ModelConfig,
    pub params: Params<f32>,
    pub sinusoid: SinusoidTable<f32>,
    pub vocab: Vocabulary,
}

pub fn load_model(flags: &Flags) -> CliResult<LoadedModel> {
    let ckpt = flags.require("ckpt")?;
    let vocab_path = flags.require("vocab")?;
    let (config, params) = load_checkpoint(Path::new(ckpt))?;
    let vocab = Vocabulary::load(Path::new(vocab_path))?;
    if vocab.size() != config.vocab_size {
        return Err(CliError::Data(Error::Config(format!(
            "vocabulary {} has {} entries but the checkpoint expects {}",
            vocab_path,
            vocab.size(),
            config.vocab_size
        ))));
    }
    let sinusoid = SinusoidTable::new(config.d_model, config.max_offset)?;
    Ok(LoadedModel { config, params, sinusoid, vocab })
}

/// Parses `i:j` into a half-open span.
pub fn parse_span(s: &str) -> CliResult<(usize, usize)> {
    let parse = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{v:?} in span {s:?} is not an index")))
    };
    let (i, j) = s
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("span {s:?} must look like i:j")))?;
    Ok((parse(i)?, parse(j)?))
}

/// Parses a comma-separated list of non-negative integers.
pub fn parse_index_list(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| CliError::Usage(format!("{v:?} is not an index")))
        })
        .collect()
}
