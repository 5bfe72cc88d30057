//! Graph size, interference and pressure over a generated corpus, with the
//! correlations between them.
//!
//! `cargo run --release --example corpus_stats [count]`

use marl_regalloc::cli::pearson;
use marl_regalloc::igraph::build_interference_graph;
use marl_regalloc::liveness::compute_liveness;
use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::{generate_random_function, GenParams};

fn main() {
    let count: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let params = GenParams::for_machine(&MachineDescription::x86like());
    let (mut vs, mut es, mut ps) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..count {
        let f = generate_random_function(seed, &params);
        let info = compute_liveness(&f);
        let g = build_interference_graph(&f, &info);
        vs.push(g.num_vregs() as f64);
        es.push(g.num_edges() as f64);
        ps.push(info.pressure as f64);
    }
    let mean = |xs: &[f64]| xs.iter().fold(0.0, |a, b| a + b) / xs.len() as f64;
    println!("{count} functions: mean |V| {:.1}, mean |E| {:.1}, mean pressure {:.1}", mean(&vs), mean(&es), mean(&ps));
    let show = |r: Option<f64>| r.map_or("undefined".to_string(), |r| format!("{r:.3}"));
    println!("pearson(|V|, |E|) = {}", show(pearson(&vs, &es)));
    println!("pearson(pressure, |E|) = {}", show(pearson(&ps, &es)));
}
