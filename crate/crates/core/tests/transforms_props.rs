mod common;

use marl_regalloc::baselines::{greedy_allocate, GreedyOptions};
use marl_regalloc::liveness::compute_liveness;
use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::{generate_random_function, interpret, interpret_with_machine, GenParams, MachineFunction, Opcode, DEFAULT_FUEL};
use marl_regalloc::transforms::{
    apply_assignment, insert_spill, materialize, split_live_range, splittable_points, verify_allocation, Color, ColorMap,
    ViolationKind,
};
use proptest::prelude::*;

fn same_outputs(a: &MachineFunction, b: &MachineFunction, seed: u64) -> bool {
    common::inputs(a.params.len(), seed, 6)
        .iter()
        .all(|x| interpret(a, x, DEFAULT_FUEL) == interpret(b, x, DEFAULT_FUEL))
}

fn tiny_params() -> GenParams {
    let md = MachineDescription::tiny3();
    GenParams {
        params: 2,
        ..common::small_params(&md)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_split_preserves_semantics(seed in any::<u64>()) {
        let f = generate_random_function(seed, &tiny_params());
        let info = compute_liveness(&f);
        for v in info.ranges.keys() {
            for k in splittable_points(&f, &info, v) {
                let r = split_live_range(&f, v, k).unwrap();
                prop_assert!(same_outputs(&f, &r.function, seed), "split {} at {}", v, k);
                prop_assert!(!r.function.vregs().contains_key(v.as_str()));
                prop_assert_eq!(&r.liveness, &compute_liveness(&r.function));
                let mv = r.function.instruction_at(r.split_move).unwrap();
                prop_assert_eq!(mv.opcode, Opcode::Mov);
                prop_assert!(mv.defines_vreg(&r.v_double) && mv.uses_vreg(&r.v_prime));
                for p in &r.repair_moves {
                    let m = r.function.instruction_at(*p).unwrap();
                    prop_assert!(m.defines_vreg(&r.v_prime) && m.uses_vreg(&r.v_double));
                }
                prop_assert_eq!(r.function.num_points(), f.num_points() + 1 + r.repair_moves.len() as u32);
            }
        }
    }

    #[test]
    fn every_spill_preserves_semantics(seed in any::<u64>()) {
        let f = generate_random_function(seed, &tiny_params());
        for v in f.vregs().keys() {
            let s = insert_spill(&f, v).unwrap();
            prop_assert!(same_outputs(&f, &s.function, seed), "spill {}", v);
            prop_assert_eq!(s.slot, f.max_slot().map_or(0, |m| m + 1));
            prop_assert!(!s.function.vregs().contains_key(v.as_str()));
            prop_assert_eq!(s.temps.len(), s.loads + s.stores);
            prop_assert!(s.temps.iter().all(|t| s.function.vregs().contains_key(t)));
        }
    }

    #[test]
    fn spilling_everything_then_materializing_runs(seed in any::<u64>()) {
        let md = MachineDescription::tiny3();
        let f = generate_random_function(seed, &tiny_params());
        let decisions: ColorMap = f.vregs().into_keys().map(|v| (v, Color::Spill)).collect();
        let m = materialize(&f, &md, &decisions).unwrap();
        prop_assert!(m.function.vregs().is_empty());
        prop_assert!(m.cascaded.is_empty());
        for x in common::inputs(f.params.len(), seed, 4) {
            prop_assert_eq!(interpret(&f, &x, DEFAULT_FUEL), interpret_with_machine(&m.function, &md, &x, DEFAULT_FUEL));
        }
    }

    #[test]
    fn greedy_allocations_verify_and_run(seed in any::<u64>(), machine in 0usize..3) {
        let md = [MachineDescription::tiny3(), MachineDescription::x86like(), MachineDescription::arm64like()][machine].clone();
        let f = generate_random_function(seed, &GenParams { params: 2, ..GenParams::for_machine(&md) });
        let r = greedy_allocate(&f, &md, GreedyOptions::default()).unwrap();
        let m = &r.materialized;
        let info = compute_liveness(&m.virtual_function);
        prop_assert!(verify_allocation(&m.virtual_function, &info, &m.assignment, &md).is_ok());
        prop_assert_eq!(&apply_assignment(&m.virtual_function, &md, &m.assignment).unwrap(), &m.function);
        for x in common::inputs(f.params.len(), seed, 4) {
            prop_assert_eq!(interpret(&f, &x, DEFAULT_FUEL), interpret_with_machine(&m.function, &md, &x, DEFAULT_FUEL));
        }
    }

    #[test]
    fn verifier_catches_a_forced_conflict(seed in any::<u64>()) {
        let md = MachineDescription::tiny3();
        let f = generate_random_function(seed, &tiny_params());
        let r = greedy_allocate(&f, &md, GreedyOptions::default()).unwrap();
        let m = &r.materialized;
        let info = compute_liveness(&m.virtual_function);
        let g = marl_regalloc::igraph::build_interference_graph(&m.virtual_function, &info);
        if let Some((a, b)) = g.edges().into_iter().find(|(a, b)| !a.starts_with('$') && !b.starts_with('$')) {
            let mut bad = m.assignment.clone();
            let c = bad[&a].clone();
            bad.insert(b.clone(), c);
            let errs = verify_allocation(&m.virtual_function, &info, &bad, &md).unwrap_err();
            prop_assert!(errs.iter().any(|e| e.kind == ViolationKind::Interference));
        }
        let mut missing = m.assignment.clone();
        if let Some(k) = missing.keys().next().cloned() {
            missing.remove(&k);
            let errs = verify_allocation(&m.virtual_function, &info, &missing, &md).unwrap_err();
            prop_assert!(errs.iter().any(|e| e.kind == ViolationKind::Unmapped));
        }
    }
}

#[test]
fn wrong_type_is_a_violation() {
    let md = MachineDescription::x86like();
    let f = marl_regalloc::mir::parse_function(include_str!("../data/running_example_x86.mir")).unwrap();
    let info = compute_liveness(&f);
    let mut cmap: ColorMap = info.ranges.keys().map(|v| (v.clone(), Color::Spill)).collect();
    let v = info.ranges.keys().next().unwrap().clone();
    let wrong = md.registers.iter().find(|r| r.type_id != info.types[&v]).unwrap().id.clone();
    cmap.insert(v, Color::Reg(wrong));
    let errs = verify_allocation(&f, &info, &cmap, &md).unwrap_err();
    assert!(errs.iter().any(|e| e.kind == ViolationKind::Type));
}
