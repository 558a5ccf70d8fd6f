//! `xledit gen-tasks` — build task files from a corpus or a synthetic grammar.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use xledit::encoding::{load_corpus, load_style_corpus};
use xledit::error::Error;
use xledit::evalkit::{gen_tasks, write_tasks, EvalCorpus, TaskKind};
use xledit::numerics::SeedRng;

use crate::{build_config, usage, CliResult, Flags, COMMON_VALUE_FLAGS};

const HELP: &str = "usage: xledit gen-tasks --kind KIND --out FILE (--corpus FILE | --synthetic) [flags]

flags:
  --kind KIND          locate | infill | delete | transfer (sets eval.kind)
  --n N                number of instances (sets eval.n)
  --out FILE           task file to write (JSON lines)
  --corpus FILE        source corpus; transfer kind expects style<TAB>text lines
  --synthetic          generate the corpus from the grammar.* settings instead
  --dump-corpus FILE   also write the synthetic corpus for later training
  --config/--set/--seed  see `xledit --help`";

pub fn run(args: &[String]) -> CliResult<()> {
    if super::wants_help(args) {
        println!("{HELP}");
        return Ok(());
    }
    let mut value_flags = vec!["kind", "n", "out", "corpus", "dump-corpus"];
    value_flags.extend_from_slice(COMMON_VALUE_FLAGS);
    let flags = Flags::parse(args, &value_flags, &["synthetic"])?;
    let mut cfg = build_config(&flags)?;
    if let Some(k) = flags.get("kind") {
        cfg.set("eval.kind", k)?;
    }
    if let Some(n) = flags.get("n") {
        cfg.set("eval.n", n)?;
    }
    if let Some(p) = flags.get("corpus") {
        cfg.set("paths.corpus", p)?;
    }
    let kind = TaskKind::parse(cfg.str_of("eval.kind")?)?;
    let n = cfg.usize_of("eval.n")?;
    let out_path = PathBuf::from(flags.require("out")?);
    let synthetic = flags.has("synthetic");
    if synthetic && cfg.is_set("paths.corpus") {
        return Err(usage("--synthetic and --corpus are mutually exclusive"));
    }

    let root = SeedRng::new(cfg.seed()?);
    let corpus = if synthetic {
        let mut rng = root.split("corpus");
        let (lines, labels): (Vec<String>, Option<Vec<usize>>) =
            if kind == TaskKind::Transfer {
                let g = cfg.style_grammar()?;
                let rows = g.generate(cfg.usize_of("grammar.style_lines")?, &mut rng);
                let (lines, labels) = rows.into_iter().unzip();
                (lines, Some(labels))
            } else {
                let g = cfg.article_grammar()?;
                (g.generate(cfg.usize_of("grammar.articles")?, &mut rng), None)
            };
        if let Some(dump) = flags.get("dump-corpus") {
            let dump = PathBuf::from(dump);
            let mut text = String::new();
            for (k, line) in lines.iter().enumerate() {
                match &labels {
                    Some(labels) => {
                        text.push_str(&format!("{}\t{line}\n", labels[k]));
                    }
                    None => {
                        text.push_str(line);
                        text.push('\n');
                    }
                }
            }
            fs::write(&dump, text).map_err(|e| Error::io(&dump, e))?;
        }
        match labels {
            Some(labels) => EvalCorpus::from_labeled(
                lines.iter().map(String::as_str).zip(labels),
            ),
            None => EvalCorpus::from_lines(lines.iter().map(String::as_str)),
        }
    } else {
        let path = PathBuf::from(cfg.str_of("paths.corpus")?);
        if kind == TaskKind::Transfer {
            let rows = load_style_corpus(&path)?;
            EvalCorpus::from_labeled(rows.iter().map(|(s, l)| (l.as_str(), *s)))
        } else {
            let lines = load_corpus(&path)?;
            EvalCorpus::from_lines(lines.iter().map(String::as_str))
        }
    };

    let tasks = gen_tasks(&corpus, kind, n, &mut root.split("tasks"))?;
    let file = fs::File::create(&out_path).map_err(|e| Error::io(&out_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_tasks(&mut w, &tasks)?;
    w.flush().map_err(|e| Error::io(&out_path, e))?;
    println!("wrote {} {} tasks to {}", tasks.len(), kind.name(), out_path.display());
    Ok(())
}
