//! `xledit` — train, probe, and apply insertion-based post-editing models.

mod commands;
mod config;

use std::fmt;

use config::RunConfig;

/// Failures split by exit code: usage mistakes exit 1, everything that goes
/// wrong with data, files, or configuration exits 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(xledit::error::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<xledit::error::Error> for CliError {
    fn from(e: xledit::error::Error) -> Self {
        CliError::Data(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parsed command-line flags: `--name value` pairs and bare `--name`
/// switches, validated against the sets a subcommand accepts.
pub struct Flags {
    values: Vec<(String, String)>,
    switches: Vec<String>,
}

impl Flags {
    fn parse(
        args: &[String],
        value_flags: &[&str],
        switch_flags: &[&str],
    ) -> CliResult<Flags> {
        let mut values = Vec::new();
        let mut switches = Vec::new();
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(name) = arg.strip_prefix("--") else {
                return Err(usage(format!("unexpected argument {arg:?}")));
            };
            if switch_flags.contains(&name) {
                switches.push(name.to_string());
            } else if value_flags.contains(&name) {
                let value = it
                    .next()
                    .ok_or_else(|| usage(format!("--{name} needs a value")))?;
                values.push((name.to_string(), value.clone()));
            } else {
                return Err(usage(format!("unknown flag --{name}")));
            }
        }
        Ok(Flags { values, switches })
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn all<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.values
            .iter()
            .filter(move |(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, name: &str) -> CliResult<&str> {
        self.get(name)
            .ok_or_else(|| usage(format!("--{name} is required")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }
}

/// Flags every subcommand accepts.
pub const COMMON_VALUE_FLAGS: &[&str] = &["config", "set", "seed"];

/// Builds the run configuration: defaults, then config files, then `--set`
/// overrides, then the seed flag.
pub fn build_config(flags: &Flags) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    for path in flags.all("config") {
        cfg.load_file(std::path::Path::new(path))?;
    }
    for kv in flags.all("set") {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = flags.get("seed") {
        cfg.set("seed", seed)?;
    }
    Ok(cfg)
}

const TOP_USAGE: &str = "usage: xledit <command> [flags]

commands:
  train            train a model on a corpus and write a checkpoint
  gen-tasks        build post-editing or transfer task files
  eval             grade a checkpoint on a task file
  edit             apply one locate/infill/delete/replace op to stdin text
  transfer         rewrite styled text line by line
  inspect-offsets  print the relative-offset matrix of a span layout

common flags:
  --config FILE    read `key = value` settings (repeatable)
  --set KEY=VALUE  override one setting (repeatable)
  --seed N         root random seed (overrides the `seed` key)
  --help           this text, or per-command flags

environment:
  XLEDIT_LOG={error|info|debug}  log verbosity (default error)

configuration keys (flags override files; defaults shown):";

fn print_help() {
    println!("{TOP_USAGE}");
    print!("{}", RunConfig::help_table());
}

fn dispatch(cmd: &str, rest: &[String]) -> CliResult<()> {
    match cmd {
        "train" => commands::train::run(rest),
        "gen-tasks" => commands::gen_tasks::run(rest),
        "eval" => commands::eval::run(rest),
        "edit" => commands::edit::run(rest),
        "transfer" => commands::transfer::run(rest),
        "inspect-offsets" => commands::offsets::run(rest),
        other => Err(usage(format!("unknown command {other:?}"))),
    }
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("XLEDIT_LOG", "error"),
    )
    .format_timestamp(None)
    .init();

    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "help" {
        print_help();
        std::process::exit(if args.is_empty() { 1 } else { 0 });
    }
    let code = match dispatch(&args[0], &args[1..]) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            eprintln!("run `xledit --help` for commands and keys");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    };
    std::process::exit(code);
}
