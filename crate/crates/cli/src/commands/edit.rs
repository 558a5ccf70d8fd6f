//! `xledit edit` — apply one post-editing operation to stdin text.

use std::io::Read;

use xledit::editor::{DeleteStrategy, Editor};
use xledit::error::Error;

use crate::{usage, CliError, CliResult, Flags, COMMON_VALUE_FLAGS};

const HELP: &str = "usage: xledit edit --ckpt FILE --vocab FILE --op OP [flags] < text

operations (token indices are 0-based, spans half-open):
  --op locate   [--candidates G1,G2,..]   print the gap most needing an insertion
  --op infill   --at GAP [--cap N]        decode an insertion and print the result
  --op delete   --spans I:J,I:J,.. [--rank]  drop the likeliest-spurious span
  --op replace  --span I:J --with \"WORDS\"   swap a span for the given words

flags:
  --ckpt FILE / --vocab FILE   trained model
  --config/--set/--seed        see `xledit --help`";

pub fn run(args: &[String]) -> CliResult<()> {
    if super::wants_help(args) {
        println!("{HELP}");
        return Ok(());
    }
    let mut value_flags = vec![
        "ckpt", "vocab", "op", "candidates", "at", "cap", "spans", "span", "with",
    ];
    value_flags.extend_from_slice(COMMON_VALUE_FLAGS);
    let flags = Flags::parse(args, &value_flags, &["rank"])?;
    let model = super::load_model(&flags)?;
    let editor = Editor::new(&model.params, &model.config, &model.sinusoid);

    let mut text = String::new();
    std::io::stdin()
        .read_to_string(&mut text)
        .map_err(|e| Error::io("<stdin>", e))?;
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return Err(CliError::Data(Error::Corpus("stdin held no tokens".into())));
    }
    let ids = super::ids_of(&model.vocab, words.iter())?;

    match flags.require("op")? {
        "locate" => {
            let candidates = flags
                .get("candidates")
                .map(super::parse_index_list)
                .transpose()?;
            let gap = editor.locate(&ids, candidates.as_deref())?;
            println!("{gap}");
        }
        "infill" => {
            let at: usize = flags
                .require("at")?
                .parse()
                .map_err(|_| usage("--at must be a gap index".to_string()))?;
            let cap = match flags.get("cap") {
                Some(v) => v
                    .parse()
                    .map_err(|_| usage("--cap must be a length".to_string()))?,
                None => model.config.max_decode_len,
            };
            let outcome = editor.infill(&ids, at, cap)?;
            if outcome.capped {
                log::info!("decode hit the {cap}-token cap before the end marker");
            }
            let mut out = ids[..at].to_vec();
            out.extend_from_slice(&outcome.tokens);
            out.extend_from_slice(&ids[at..]);
            println!("{}", model.vocab.detokenize(&out)?);
        }
        "delete" => {
            let spans: Vec<(usize, usize)> = flags
                .require("spans")?
                .split(',')
                .map(super::parse_span)
                .collect::<CliResult<_>>()?;
            let strategy = if flags.has("rank") {
                DeleteStrategy::Rank
            } else {
                DeleteStrategy::Ratio
            };
            let (i, j) = editor.delete_rank(&ids, &spans, strategy)?;
            log::info!("deleting span {i}:{j}");
            let mut out = ids[..i].to_vec();
            out.extend_from_slice(&ids[j..]);
            println!("{}", model.vocab.detokenize(&out)?);
        }
        "replace" => {
            let (i, j) = super::parse_span(flags.require("span")?)?;
            let with = flags.require("with")?;
            let y = super::ids_of(&model.vocab, with.split_whitespace())?;
            let odds = editor.replace_odds(&ids, i, j, &y, None)?;
            log::info!("replacement odds {odds:.6}");
            let mut out = ids[..i].to_vec();
            out.extend_from_slice(&y);
            out.extend_from_slice(&ids[j..]);
            println!("{}", model.vocab.detokenize(&out)?);
        }
        other => return Err(usage(format!("unknown op {other:?}"))),
    }
    Ok(())
}
