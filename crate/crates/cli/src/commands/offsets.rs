//! `xledit inspect-offsets` — print the relative-offset matrix of a layout.

use xledit::positional::{OffsetMatrix, SpanLayout};

use crate::{usage, CliResult, Flags, COMMON_VALUE_FLAGS};

const HELP: &str = "usage: xledit inspect-offsets --len T --a A --b B

Positions are 1-based for display: the span occupies slots A..=B and slot B
holds the end-of-insertion marker. Prints the effective relative offset for
every attending pair and the legality mask ('.' and 0 mark pairs that must
not attend; the query stream additionally drops the diagonal).";

pub fn run(args: &[String]) -> CliResult<()> {
    if super::wants_help(args) {
        println!("{HELP}");
        return Ok(());
    }
    let mut value_flags = vec!["len", "a", "b"];
    value_flags.extend_from_slice(COMMON_VALUE_FLAGS);
    let flags = Flags::parse(args, &value_flags, &[])?;
    let parse = |name: &str| -> CliResult<usize> {
        flags
            .require(name)?
            .parse::<usize>()
            .map_err(|_| usage(format!("--{name} must be a positive integer")))
    };
    let len = parse("len")?;
    let a = parse("a")?;
    let b = parse("b")?;
    if a == 0 || b == 0 {
        return Err(usage("--a and --b are 1-based".to_string()));
    }
    let layout = SpanLayout::new(len, a - 1, b - 1)?;
    let matrix = OffsetMatrix::insertion(layout);

    println!("T={len} a={a} b={b} (1-based; span slots {a}..={b}, marker at {b})");
    println!("offsets (query row i attends key column j; . = disallowed):");
    for i in 0..len {
        let mut row = format!("i={:<2}|", i + 1);
        for j in 0..len {
            if matrix.legal(i, j) {
                row.push_str(&format!("{:>5}", format!("{:+}", matrix.offset(i, j))));
            } else {
                row.push_str(&format!("{:>5}", "."));
            }
        }
        println!("{row}");
    }
    println!("legality mask:");
    for i in 0..len {
        let mut row = format!("i={:<2}|", i + 1);
        for j in 0..len {
            row.push_str(if matrix.legal(i, j) { " 1" } else { " 0" });
        }
        println!("{row}");
    }
    Ok(())
}
