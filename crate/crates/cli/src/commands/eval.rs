//! `xledit eval` — grade a checkpoint on a task file.

use std::fs;
use std::path::{Path, PathBuf};

use xledit::error::Error;
use xledit::evalkit::{
    read_tasks, run_eval, run_transfer_eval, EvalMode, ModelHandle, TaskKind,
};
use xledit::model::load_checkpoint;
use xledit::positional::SinusoidTable;

use crate::{build_config, usage, CliResult, Flags, COMMON_VALUE_FLAGS};

const HELP: &str = "usage: xledit eval --ckpt FILE --vocab FILE --tasks FILE [flags]

flags:
  --ckpt FILE        model checkpoint
  --vocab FILE       vocabulary matching the checkpoint
  --tasks FILE       JSON-lines task file from gen-tasks
  --mode MODE        xledit | xledit_rank | l2r | l2r_rank (sets eval.mode)
  --out FILE         also write the metrics JSON here
  --judge-ckpt FILE  judge classifier checkpoint (transfer tasks only)
  --config/--set/--seed  see `xledit --help`";

pub fn run(args: &[String]) -> CliResult<()> {
    if super::wants_help(args) {
        println!("{HELP}");
        return Ok(());
    }
    let mut value_flags = vec!["ckpt", "vocab", "tasks", "mode", "out", "judge-ckpt"];
    value_flags.extend_from_slice(COMMON_VALUE_FLAGS);
    let flags = Flags::parse(args, &value_flags, &[])?;
    let mut cfg = build_config(&flags)?;
    if let Some(m) = flags.get("mode") {
        cfg.set("eval.mode", m)?;
    }
    let mode = EvalMode::parse(cfg.str_of("eval.mode")?)?;

    let model = super::load_model(&flags)?;
    let handle = ModelHandle {
        params: &model.params,
        config: &model.config,
        sinusoid: &model.sinusoid,
    };

    let tasks_path = PathBuf::from(flags.require("tasks")?);
    let file = fs::File::open(&tasks_path).map_err(|e| Error::io(&tasks_path, e))?;
    let tasks = read_tasks(std::io::BufReader::new(file))?;

    let json = if tasks.first().map(|t| t.kind()) == Some(TaskKind::Transfer) {
        let judge_path = flags
            .get("judge-ckpt")
            .ok_or_else(|| usage("transfer evaluation needs --judge-ckpt".to_string()))?;
        let (judge_config, judge_params) = load_checkpoint(Path::new(judge_path))?;
        if judge_config.vocab_size != model.vocab.size() {
            return Err(usage(format!(
                "judge checkpoint expects {} vocabulary entries, --vocab has {}",
                judge_config.vocab_size,
                model.vocab.size()
            )));
        }
        let judge_sinusoid =
            SinusoidTable::new(judge_config.d_model, judge_config.max_offset)?;
        let judge = ModelHandle {
            params: &judge_params,
            config: &judge_config,
            sinusoid: &judge_sinusoid,
        };
        let base = cfg.transfer_config()?;
        let style_words = cfg.style_word_list();
        let ev = run_transfer_eval(
            &handle,
            &judge,
            &model.vocab,
            &tasks,
            &base,
            &style_words,
        )?;
        let mut value = serde_json::to_value(&ev.report)
            .map_err(|e| Error::Corpus(format!("cannot serialize report: {e}")))?;
        let obj = value.as_object_mut().expect("a report serializes to an object");
        obj.insert("mean_edits".into(), ev.mean_edits.into());
        obj.insert("token_preservation".into(), ev.token_preservation.into());
        value.to_string()
    } else {
        let report = run_eval(&handle, &model.vocab, &tasks, mode)?;
        serde_json::to_string(&report)
            .map_err(|e| Error::Corpus(format!("cannot serialize report: {e}")))?
    };

    println!("{json}");
    if let Some(out) = flags.get("out") {
        let out = PathBuf::from(out);
        fs::write(&out, format!("{json}\n")).map_err(|e| Error::io(&out, e))?;
    }
    Ok(())
}
