mod common;

use std::collections::BTreeSet;

use marl_regalloc::igraph::{build_interference_graph, legal_registers, PartialAssignment, VertexKind};
use marl_regalloc::liveness::compute_liveness;
use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::{generate_random_function, GenParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn machines() -> impl Strategy<Value = MachineDescription> {
    prop_oneof![
        Just(MachineDescription::x86like()),
        Just(MachineDescription::arm64like()),
        Just(MachineDescription::tiny3()),
    ]
}

fn random_partial(md: &MachineDescription, types: &std::collections::BTreeMap<String, String>, seed: u64) -> PartialAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut asg = PartialAssignment::default();
    for (v, ty) in types {
        if rng.gen_bool(0.4) {
            let regs = md.regs_of_type(ty).unwrap();
            asg.colors.insert(v.clone(), regs[rng.gen_range(0..regs.len())].clone());
        }
    }
    asg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn edges_are_exactly_the_overlaps(seed in any::<u64>(), md in machines()) {
        let f = generate_random_function(seed, &GenParams::for_machine(&md));
        let g = build_interference_graph(&f, &compute_liveness(&f));
        let occ = common::occupancy(&f);
        let overlap = |a: (u32, u32), b: (u32, u32)| a.0 <= b.1 && b.0 <= a.1;
        for a in &g.vertices {
            for b in &g.vertices {
                if a.id >= b.id {
                    continue;
                }
                let expected = match (&a.kind, &b.kind) {
                    (VertexKind::Physical { .. }, VertexKind::Physical { .. }) => false,
                    (VertexKind::Virtual { .. }, VertexKind::Virtual { .. }) => {
                        overlap(common::hull(&occ[&a.id]), common::hull(&occ[&b.id]))
                    }
                    _ => overlap((a.range.start, a.range.end), (b.range.start, b.range.end)),
                };
                prop_assert_eq!(g.interferes(&a.id, &b.id), expected, "{} {}", &a.id, &b.id);
                prop_assert_eq!(g.interferes(&a.id, &b.id), g.interferes(&b.id, &a.id));
            }
        }
        prop_assert_eq!(g.num_vregs(), occ.keys().filter(|k| !k.starts_with('$')).count());
    }

    #[test]
    fn legality_matches_oracle(seed in any::<u64>(), md in machines()) {
        let f = generate_random_function(seed, &GenParams::for_machine(&md));
        let info = compute_liveness(&f);
        let g = build_interference_graph(&f, &info);
        let asg = random_partial(&md, &info.types, seed);
        for v in info.ranges.keys().filter(|v| !asg.is_assigned(v)) {
            let l = legal_registers(&g, &md, &asg, v).unwrap();
            prop_assert_eq!(&l.chi, &common::chi_oracle(&f, &md, &asg.colors, v));
            let inter: Vec<String> = l.chi_t.iter().filter(|r| l.chi_c.contains(r) && l.chi_i.contains(r)).cloned().collect();
            prop_assert_eq!(&l.chi, &inter);
            prop_assert!(l.chi_c.iter().all(|r| l.chi_i.contains(r)));
        }
    }

    #[test]
    fn legality_shrinks_as_colors_are_added(seed in any::<u64>(), md in machines()) {
        let f = generate_random_function(seed, &GenParams::for_machine(&md));
        let info = compute_liveness(&f);
        let g = build_interference_graph(&f, &info);
        let full = random_partial(&md, &info.types, seed);
        let mut fewer = full.clone();
        let drop: Vec<String> = fewer.colors.keys().step_by(2).cloned().collect();
        for d in &drop {
            fewer.colors.remove(d);
        }
        for v in info.ranges.keys().filter(|v| !full.is_assigned(v)) {
            let big: BTreeSet<String> = legal_registers(&g, &md, &fewer, v).unwrap().chi.into_iter().collect();
            let small: BTreeSet<String> = legal_registers(&g, &md, &full, v).unwrap().chi.into_iter().collect();
            prop_assert!(small.is_subset(&big));
        }
    }

    #[test]
    fn spilled_neighbors_hold_nothing(seed in any::<u64>()) {
        let md = MachineDescription::tiny3();
        let f = generate_random_function(seed, &GenParams::for_machine(&md));
        let info = compute_liveness(&f);
        let g = build_interference_graph(&f, &info);
        let vs: Vec<&String> = info.ranges.keys().collect();
        if let Some((first, rest)) = vs.split_first() {
            let mut asg = PartialAssignment::default();
            for v in rest {
                asg.spilled.insert((*v).clone());
            }
            let l = legal_registers(&g, &md, &asg, first).unwrap();
            prop_assert_eq!(l.chi.len(), 3);
            prop_assert!(legal_registers(&g, &md, &asg, rest.first().map(|s| s.as_str()).unwrap_or("nope")).is_err());
        }
    }
}
