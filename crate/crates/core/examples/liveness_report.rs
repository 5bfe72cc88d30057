//! Live ranges, access points, gaps, spill weights and register pressure.
//!
//! `cargo run --example liveness_report [file.mir]`

use marl_regalloc::liveness::compute_liveness;
use marl_regalloc::mir::parse_function;

fn main() -> anyhow::Result<()> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => include_str!("../data/running_example_x86.mir").to_string(),
    };
    let f = parse_function(&text)?;
    let info = compute_liveness(&f);
    println!("{}", info.report());
    for p in 1..=f.num_points() {
        println!("point {p:>3}: live {:?}", info.live_at(p));
    }
    Ok(())
}
