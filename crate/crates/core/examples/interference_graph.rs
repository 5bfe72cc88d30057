//! Builds the interference graph of the running example and walks the
//! legality sets while coloring vertices one at a time.
//!
//! `cargo run --example interference_graph`

use marl_regalloc::igraph::{build_interference_graph, legal_registers, PartialAssignment};
use marl_regalloc::liveness::compute_liveness;
use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::parse_function;

fn main() -> anyhow::Result<()> {
    let md = MachineDescription::x86like();
    let f = parse_function(include_str!("../data/running_example_x86.mir"))?;
    let info = compute_liveness(&f);
    let g = build_interference_graph(&f, &info);
    println!("{} vertices ({} virtual), {} edges", g.len(), g.num_vregs(), g.num_edges());
    let mut asg = PartialAssignment::default();
    let order: Vec<String> = g.vreg_ids().map(String::from).collect();
    for v in &order {
        let l = legal_registers(&g, &md, &asg, v)?;
        println!("{v}: type {:?} class {:?} interference {:?} -> {:?}", l.chi_t, l.chi_c, l.chi_i, l.chi);
        match l.chi.first() {
            Some(r) => {
                asg.colors.insert(v.clone(), r.clone());
            }
            None => {
                asg.spilled.insert(v.clone());
            }
        }
    }
    println!("{}", g.dump(Some(&asg)));
    Ok(())
}
