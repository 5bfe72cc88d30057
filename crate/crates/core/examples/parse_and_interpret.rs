//! Parses a MIR function, prints it back, and runs it in the interpreter.
//!
//! `cargo run --example parse_and_interpret [file.mir] [inputs...]`

use marl_regalloc::mir::{interpret, parse_function, DEFAULT_FUEL};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let text = match args.next() {
        Some(path) => std::fs::read_to_string(path)?,
        None => include_str!("../data/running_example.mir").to_string(),
    };
    let inputs: Vec<i64> = args.map(|a| a.parse()).collect::<Result<_, _>>()?;
    let f = parse_function(&text)?;
    println!("{f}");
    println!("{} blocks, {} points, {} vregs", f.blocks.len(), f.num_points(), f.vregs().len());
    let out = interpret(&f, &inputs, DEFAULT_FUEL)?;
    println!("printed {:?}, returned {:?}", out.printed, out.ret);
    Ok(())
}
