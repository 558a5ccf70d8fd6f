//! `xledit transfer` — rewrite styled text line by line, with an audit trace.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::PathBuf;

use xledit::error::Error;
use xledit::styler::Styler;

use crate::{build_config, CliResult, Flags, COMMON_VALUE_FLAGS};

const HELP: &str = "usage: xledit transfer --ckpt FILE --vocab FILE [flags] [< text]

flags:
  --ckpt FILE / --vocab FILE  trained style-conditional model
  --src-style N / --tgt-style N  style ids (set transfer.s_src / transfer.s_tgt)
  --v-thres X       odds threshold (sets transfer.v_thres)
  --biased          bias the first decoded token by style contrast
  --forced          allow one forced insertion at position 0
  --in FILE         input lines (default stdin)
  --out FILE        rewritten lines (default stdout)
  --trace FILE      JSON-lines audit trace of every executed edit
  --config/--set/--seed  see `xledit --help`";

pub fn run(args: &[String]) -> CliResult<()> {
    if super::wants_help(args) {
        println!("{HELP}");
        return Ok(());
    }
    let mut value_flags = vec![
        "ckpt", "vocab", "src-style", "tgt-style", "v-thres", "in", "out", "trace",
    ];
    value_flags.extend_from_slice(COMMON_VALUE_FLAGS);
    let flags = Flags::parse(args, &value_flags, &["biased", "forced"])?;
    let mut cfg = build_config(&flags)?;
    if let Some(v) = flags.get("src-style") {
        cfg.set("transfer.s_src", v)?;
    }
    if let Some(v) = flags.get("tgt-style") {
        cfg.set("transfer.s_tgt", v)?;
    }
    if let Some(v) = flags.get("v-thres") {
        cfg.set("transfer.v_thres", v)?;
    }
    if flags.has("biased") {
        cfg.set("transfer.biased_sampling", "true")?;
    }
    if flags.has("forced") {
        cfg.set("transfer.forced_insertion", "true")?;
    }
    let transfer_config = cfg.transfer_config()?;

    let model = super::load_model(&flags)?;
    let styler = Styler::new(&model.params, &model.config, &model.sinusoid);

    let text = match flags.get("in") {
        Some(path) => {
            let path = PathBuf::from(path);
            fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?
        }
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| Error::io("<stdin>", e))?;
            buf
        }
    };

    let mut out: Box<dyn Write> = match flags.get("out") {
        Some(path) => {
            let path = PathBuf::from(path);
            Box::new(BufWriter::new(
                fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
            ))
        }
        None => Box::new(std::io::stdout().lock()),
    };
    let mut trace_out: Option<BufWriter<fs::File>> = match flags.get("trace") {
        Some(path) => {
            let path = PathBuf::from(path);
            Some(BufWriter::new(
                fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
            ))
        }
        None => None,
    };

    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let ids = super::ids_of(&model.vocab, line.split_whitespace())?;
        let (rewritten, trace) = styler.transfer(&ids, &transfer_config)?;
        writeln!(out, "{}", model.vocab.detokenize(&rewritten)?)
            .map_err(|e| Error::io("<out>", e))?;
        log::info!(
            "{} edits, stopped by {}",
            trace.steps.len(),
            trace.terminated_by.name()
        );
        if let Some(w) = &mut trace_out {
            trace.write_jsonl(&model.vocab, w)?;
        }
    }
    out.flush().map_err(|e| Error::io("<out>", e))?;
    if let Some(mut w) = trace_out {
        w.flush().map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}
