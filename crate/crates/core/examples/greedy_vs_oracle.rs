//! Greedy coloring against the exhaustive optimum on small graphs, and the
//! full greedy allocator (with splitting) on the same functions.
//!
//! `cargo run --release --example greedy_vs_oracle [count]`

use marl_regalloc::baselines::{brute_force_color, greedy_allocate, greedy_color_graph, spill_cost, GreedyOptions, ORACLE_MAX_VERTICES};
use marl_regalloc::igraph::build_interference_graph;
use marl_regalloc::liveness::compute_liveness;
use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::{generate_random_function, GenParams};

fn main() -> anyhow::Result<()> {
    let count: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let md = MachineDescription::tiny3();
    let params = GenParams {
        blocks: 5,
        instrs: 12,
        vregs: 5,
        ..GenParams::for_machine(&md)
    };
    println!("{:>5} {:>4} {:>10} {:>10} {:>12}", "seed", "|V|", "greedy", "optimal", "alloc cost");
    let (mut shown, mut seed) = (0, 0u64);
    while shown < count {
        let f = generate_random_function(seed, &params);
        seed += 1;
        let info = compute_liveness(&f);
        let g = build_interference_graph(&f, &info);
        if g.num_vregs() == 0 || g.num_vregs() > ORACLE_MAX_VERTICES {
            continue;
        }
        let greedy = spill_cost(&g, &greedy_color_graph(&g, &md));
        let opt = spill_cost(&g, &brute_force_color(&g, &md)?);
        let alloc = greedy_allocate(&f, &md, GreedyOptions::default())?;
        println!(
            "{:>5} {:>4} {:>10} {:>10} {:>12}",
            seed - 1,
            g.num_vregs(),
            format!("{}/{}", greedy.0, greedy.1),
            format!("{}/{}", opt.0, opt.1),
            alloc.cost
        );
        shown += 1;
    }
    println!("columns: spilled weight/spilled vertices; alloc cost is the throughput estimate");
    Ok(())
}
