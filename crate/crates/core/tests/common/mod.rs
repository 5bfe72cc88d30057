//! Independent reference implementations used as test oracles. None of
//! them call the analyses they check: liveness is solved per instruction,
//! dominance by reachability with a block removed, loops from back edges.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::{generate_random_function, GenParams, MachineFunction, Opcode, Operand};

/// Successor lists of the block graph, straight from the terminators.
pub fn block_succs(f: &MachineFunction) -> Vec<Vec<usize>> {
    let n = f.blocks.len();
    (0..n)
        .map(|b| {
            let block = &f.blocks[b];
            match block.insts.last() {
                Some(t) if t.opcode == Opcode::Ret => vec![],
                Some(t) if t.opcode.is_terminator() => {
                    let mut s = Vec::new();
                    for op in &t.uses {
                        if let Operand::Label(l) = op {
                            let i = f.blocks.iter().position(|x| &x.label == l).unwrap();
                            if !s.contains(&i) {
                                s.push(i);
                            }
                        }
                    }
                    s
                }
                _ if b + 1 < n => vec![b + 1],
                _ => vec![],
            }
        })
        .collect()
}

fn reachable_without(succs: &[Vec<usize>], removed: Option<usize>) -> Vec<bool> {
    let mut seen = vec![false; succs.len()];
    if succs.is_empty() || removed == Some(0) {
        return seen;
    }
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(b) = stack.pop() {
        for &s in &succs[b] {
            if Some(s) != removed && !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    seen
}

/// `dom[b]` = blocks through which every entry path to `b` passes.
pub fn dominators_by_paths(succs: &[Vec<usize>]) -> Vec<BTreeSet<usize>> {
    let n = succs.len();
    let reach = reachable_without(succs, None);
    let mut dom = vec![BTreeSet::new(); n];
    for (b, d) in dom.iter_mut().enumerate() {
        if reach[b] {
            d.insert(b);
        }
    }
    for a in 0..n {
        if !reach[a] {
            continue;
        }
        let without = reachable_without(succs, Some(a));
        for b in 0..n {
            if reach[b] && b != a && !without[b] {
                dom[b].insert(a);
            }
        }
    }
    dom
}

/// Dominance frontier from the definition, reachable blocks only.
pub fn frontier_oracle(succs: &[Vec<usize>]) -> Vec<BTreeSet<usize>> {
    let n = succs.len();
    let reach = reachable_without(succs, None);
    let dom = dominators_by_paths(succs);
    let mut df = vec![BTreeSet::new(); n];
    for p in 0..n {
        if !reach[p] {
            continue;
        }
        for &b in &succs[p] {
            for a in 0..n {
                let strictly = a != b && dom[b].contains(&a);
                if dom[p].contains(&a) && !strictly {
                    df[a].insert(b);
                }
            }
        }
    }
    df
}

/// Loop depth per block: the number of natural-loop headers whose loop
/// contains the block.
pub fn loop_depth_oracle(succs: &[Vec<usize>]) -> Vec<u32> {
    let n = succs.len();
    let dom = dominators_by_paths(succs);
    let mut bodies: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for t in 0..n {
        for &h in &succs[t] {
            if dom[t].contains(&h) {
                let body = bodies.entry(h).or_default();
                body.insert(h);
                let mut stack = vec![t];
                while let Some(x) = stack.pop() {
                    if body.insert(x) {
                        for p in 0..n {
                            if succs[p].contains(&x) {
                                stack.push(p);
                            }
                        }
                    }
                }
            }
        }
    }
    (0..n)
        .map(|b| bodies.values().filter(|s| s.contains(&b)).count() as u32)
        .collect()
}

fn key(op: &Operand) -> Option<String> {
    match op {
        Operand::Virtual(v) => Some(v.name.clone()),
        Operand::Physical(r) => Some(format!("${r}")),
        _ => None,
    }
}

/// Points occupied by each value: where it is defined, used, or live after
/// the instruction. Keys are vreg names and `$reg` for physical registers.
pub fn occupancy(f: &MachineFunction) -> BTreeMap<String, BTreeSet<u32>> {
    let insts: Vec<_> = f.blocks.iter().flat_map(|b| b.insts.iter()).collect();
    let np = insts.len();
    let succs = block_succs(f);
    let mut first_of = vec![None; f.blocks.len()];
    let mut last_of = vec![None; f.blocks.len()];
    let mut p = 0;
    for (b, block) in f.blocks.iter().enumerate() {
        if !block.insts.is_empty() {
            first_of[b] = Some(p);
            last_of[b] = Some(p + block.insts.len() - 1);
        }
        p += block.insts.len();
    }
    // Entry points of a block, looking through empty blocks.
    let entry_points = |b: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![b];
        while let Some(x) = stack.pop() {
            if !seen.insert(x) {
                continue;
            }
            match first_of[x] {
                Some(p) => out.push(p),
                None => stack.extend(succs[x].iter().copied()),
            }
        }
        out
    };
    let mut psucc: Vec<Vec<usize>> = vec![Vec::new(); np];
    for (b, _) in f.blocks.iter().enumerate() {
        if let (Some(s), Some(e)) = (first_of[b], last_of[b]) {
            for q in s..e {
                psucc[q].push(q + 1);
            }
            for &t in &succs[b] {
                psucc[e].extend(entry_points(t));
            }
        }
    }
    let defs: Vec<BTreeSet<String>> = insts.iter().map(|i| i.defs.iter().filter_map(key).collect()).collect();
    let uses: Vec<BTreeSet<String>> = insts.iter().map(|i| i.uses.iter().filter_map(key).collect()).collect();
    let mut live_in: Vec<BTreeSet<String>> = vec![BTreeSet::new(); np];
    let mut live_out: Vec<BTreeSet<String>> = vec![BTreeSet::new(); np];
    let mut changed = true;
    while changed {
        changed = false;
        for q in (0..np).rev() {
            let out: BTreeSet<String> = psucc[q].iter().flat_map(|&s| live_in[s].iter().cloned()).collect();
            let mut inn: BTreeSet<String> = out.difference(&defs[q]).cloned().collect();
            inn.extend(uses[q].iter().cloned());
            if inn != live_in[q] || out != live_out[q] {
                live_in[q] = inn;
                live_out[q] = out;
                changed = true;
            }
        }
    }
    let mut occ: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for q in 0..np {
        for k in defs[q].iter().chain(&uses[q]).chain(&live_out[q]) {
            occ.entry(k.clone()).or_default().insert(q as u32 + 1);
        }
    }
    for prm in &f.params {
        if let Some(k) = key(prm) {
            let e = occ.entry(k).or_default();
            if np > 0 {
                e.insert(1);
            }
        }
    }
    occ
}

pub fn hull(points: &BTreeSet<u32>) -> (u32, u32) {
    match (points.first(), points.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => (1, 1),
    }
}

/// Maximal runs of consecutive points.
pub fn runs(points: &BTreeSet<u32>) -> Vec<(u32, u32)> {
    let mut out: Vec<(u32, u32)> = Vec::new();
    for &p in points {
        match out.last_mut() {
            Some(r) if r.1 + 1 == p => r.1 = p,
            _ => out.push((p, p)),
        }
    }
    out
}

fn overlaps(a: (u32, u32), b: (u32, u32)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// Vreg types from the operands, independent of the library's collection.
pub fn vreg_types(f: &MachineFunction) -> BTreeMap<String, String> {
    let mut t = BTreeMap::new();
    for op in f.params.iter().chain(f.blocks.iter().flat_map(|b| b.insts.iter().flat_map(|i| i.defs.iter().chain(&i.uses)))) {
        if let Operand::Virtual(v) = op {
            t.insert(v.name.clone(), v.ty.clone());
        }
    }
    t
}

/// Registers legal for `v`: right type, and no overlapping value (colored
/// vreg or physical register) holds a register of the same class.
pub fn chi_oracle(
    f: &MachineFunction,
    md: &MachineDescription,
    colors: &BTreeMap<String, String>,
    v: &str,
) -> Vec<String> {
    let occ = occupancy(f);
    let types = vreg_types(f);
    let hv = hull(&occ[v]);
    let mut held: Vec<String> = Vec::new();
    for (k, pts) in &occ {
        if let Some(r) = k.strip_prefix('$') {
            if runs(pts).into_iter().any(|s| overlaps(s, hv)) {
                held.push(r.to_string());
            }
        } else if k != v {
            if let Some(r) = colors.get(k) {
                if overlaps(hull(pts), hv) {
                    held.push(r.clone());
                }
            }
        }
    }
    let ty = &types[v];
    md.registers
        .iter()
        .filter(|r| &r.type_id == ty)
        .filter(|r| {
            held.iter().all(|h| {
                let same_class = md.classes.iter().any(|c| c.contains(h) && c.contains(&r.id));
                h != &r.id && !same_class
            })
        })
        .map(|r| r.id.clone())
        .collect()
}

/// Loop-depth-weighted access count, from the oracle depths. A parameter
/// counts as accessed at the first instruction.
pub fn weight_oracle(f: &MachineFunction, v: &str) -> f64 {
    let depths = loop_depth_oracle(&block_succs(f));
    let is_param = f.params.iter().any(|p| p.is_vreg_named(v));
    let mut w = 0.0;
    let mut first = true;
    for (b, block) in f.blocks.iter().enumerate() {
        for inst in &block.insts {
            let hit = inst.defs.iter().chain(&inst.uses).any(|o| o.is_vreg_named(v));
            if hit || (first && is_param) {
                w += 10f64.powi(depths[b] as i32);
            }
            first = false;
        }
    }
    w
}

/// Seeded functions for which `keep` holds, `n` of them.
pub fn corpus(
    n: usize,
    params: &GenParams,
    mut keep: impl FnMut(&MachineFunction) -> bool,
) -> Vec<(u64, MachineFunction)> {
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < n {
        let f = generate_random_function(seed, params);
        if keep(&f) {
            out.push((seed, f));
        }
        seed += 1;
        assert!(seed < 100 * n as u64 + 1000, "generator rarely meets the filter");
    }
    out
}

/// Small functions on a 3-register machine, dense enough to force spills.
pub fn small_params(md: &MachineDescription) -> GenParams {
    GenParams {
        blocks: 5,
        instrs: 12,
        vregs: 5,
        ..GenParams::for_machine(md)
    }
}

pub fn inputs(arity: usize, seed: u64, count: usize) -> Vec<Vec<i64>> {
    marl_regalloc::cli::probe_inputs(arity, seed, count)
}
