//! `xledit train` — fit a model and write checkpoint, vocabulary, metrics.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use xledit::encoding::{load_corpus, load_style_corpus, Vocabulary};
use xledit::error::Error;
use xledit::model::save_checkpoint;
use xledit::objectives::{train, TrainDoc};

use crate::{build_config, usage, CliResult, Flags, COMMON_VALUE_FLAGS};

const HELP: &str = "usage: xledit train --corpus FILE [flags]

flags:
  --corpus FILE   training corpus (plain lines, or style<TAB>text with --styled)
  --styled        corpus lines carry style labels (sets train.styled)
  --out DIR       output directory for model.ckpt, vocab.txt, metrics.jsonl
  --config/--set/--seed  see `xledit --help`";

pub fn run(args: &[String]) -> CliResult<()> {
    if super::wants_help(args) {
        println!("{HELP}");
        return Ok(());
    }
    let mut value_flags = vec!["corpus", "out"];
    value_flags.extend_from_slice(COMMON_VALUE_FLAGS);
    let flags = Flags::parse(args, &value_flags, &["styled"])?;
    let mut cfg = build_config(&flags)?;
    if let Some(p) = flags.get("corpus") {
        cfg.set("paths.corpus", p)?;
    }
    if let Some(p) = flags.get("out") {
        cfg.set("paths.out", p)?;
    }
    if flags.has("styled") {
        cfg.set("train.styled", "true")?;
    }

    let corpus_path = PathBuf::from(cfg.str_of("paths.corpus")?);
    let out_dir = PathBuf::from(cfg.str_of("paths.out")?);
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let num_styles = cfg.usize_of("model.num_styles")?;
    let (lines, labels): (Vec<String>, Option<Vec<usize>>) =
        if cfg.bool_of("train.styled")? {
            let rows = load_style_corpus(&corpus_path)?;
            let (labels, lines) = rows.into_iter().unzip();
            (lines, Some(labels))
        } else {
            (load_corpus(&corpus_path)?, None)
        };
    if let Some(labels) = &labels {
        if let Some(&top) = labels.iter().max() {
            if top >= num_styles {
                return Err(usage(format!(
                    "corpus labels reach style {top}; raise model.num_styles above it"
                )));
            }
        }
    }

    let vocab = Vocabulary::build(lines.iter().map(String::as_str), num_styles);
    let docs: Vec<TrainDoc> = lines
        .iter()
        .enumerate()
        .map(|(k, line)| {
            let ids = vocab.tokenize(line);
            match &labels {
                Some(labels) => TrainDoc::styled(ids, labels[k]),
                None => TrainDoc::plain(ids),
            }
        })
        .collect();

    let model_config = cfg.model_config(vocab.size())?;
    let train_config = cfg.train_config()?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let metrics_file =
        fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = std::io::BufWriter::new(metrics_file);
    let params = train::<f32>(&docs, &model_config, &train_config, |report| {
        let line = serde_json::to_string(report)
            .map_err(|e| Error::Corpus(format!("cannot serialize report: {e}")))?;
        writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        log::info!(
            "step {} insertion nll {:.4} style ce {:.4}",
            report.step,
            report.ins_nll,
            report.cls_ce
        );
        Ok(())
    })?;
    metrics.into_inner().map_err(|e| Error::io(&metrics_path, e.into()))?;

    let vocab_path = out_dir.join("vocab.txt");
    vocab.save(&vocab_path)?;
    let ckpt_path = out_dir.join("model.ckpt");
    save_checkpoint(&params, &model_config, &ckpt_path)?;
    println!(
        "trained {} steps on {} documents; wrote {}",
        train_config.steps,
        docs.len(),
        ckpt_path.display()
    );
    Ok(())
}
