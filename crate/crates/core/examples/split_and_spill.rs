//! Splits a live range at every allowed point, then spills a vreg, checking
//! that program output never changes.
//!
//! `cargo run --example split_and_spill [vreg]`

use marl_regalloc::liveness::compute_liveness;
use marl_regalloc::mir::{interpret, parse_function, DEFAULT_FUEL};
use marl_regalloc::transforms::{insert_spill, split_live_range, splittable_points};

fn main() -> anyhow::Result<()> {
    let v = std::env::args().nth(1).unwrap_or_else(|| "i".into());
    let f = parse_function(include_str!("../data/running_example.mir"))?;
    let info = compute_liveness(&f);
    let want = interpret(&f, &[], DEFAULT_FUEL)?;
    let points = splittable_points(&f, &info, &v);
    println!("{v}: uses {:?}, split points {points:?}", info.uses[&v]);
    for k in points {
        let r = split_live_range(&f, &v, k)?;
        let same = interpret(&r.function, &[], DEFAULT_FUEL)? == want;
        println!(
            "split at {k}: {} over [{},{}], {} over [{},{}], weight {} -> {} + {}, same output: {same}",
            r.v_prime,
            r.liveness.ranges[&r.v_prime].start,
            r.liveness.ranges[&r.v_prime].end,
            r.v_double,
            r.liveness.ranges[&r.v_double].start,
            r.liveness.ranges[&r.v_double].end,
            info.weight(&v),
            r.liveness.weight(&r.v_prime),
            r.liveness.weight(&r.v_double),
        );
    }
    let s = insert_spill(&f, &v)?;
    println!("{}", s.function);
    println!(
        "spilled {v} to slot {} with {} loads and {} stores; same output: {}",
        s.slot,
        s.loads,
        s.stores,
        interpret(&s.function, &[], DEFAULT_FUEL)? == want
    );
    Ok(())
}
