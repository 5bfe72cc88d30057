//! Dominator tree, dominance frontiers and loop depths of a generated
//! function's control-flow graph.
//!
//! `cargo run --example dominance [seed]`

use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::{generate_random_function, Cfg, GenParams};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(11);
    let params = GenParams {
        blocks: 8,
        loop_prob: 0.5,
        ..GenParams::for_machine(&MachineDescription::x86like())
    };
    let f = generate_random_function(seed, &params);
    println!("{f}");
    let cfg = Cfg::new(&f);
    let dt = cfg.dominators();
    let df = dt.frontiers(&cfg);
    let depths = cfg.loop_depths();
    println!("{:<6} {:<6} {:<14} {:<6} succs", "block", "idom", "frontier", "depth");
    for b in 0..cfg.len() {
        let idom = dt.idom(b).map(|i| f.blocks[i].label.clone()).unwrap_or_else(|| "-".into());
        let front: Vec<&str> = df[b].iter().map(|&x| f.blocks[x].label.as_str()).collect();
        let succs: Vec<&str> = cfg.succs[b].iter().map(|&x| f.blocks[x].label.as_str()).collect();
        println!("{:<6} {:<6} {:<14} {:<6} {}", f.blocks[b].label, idom, front.join(","), depths[b], succs.join(","));
    }
}
