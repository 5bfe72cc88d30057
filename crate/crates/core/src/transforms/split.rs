use std::collections::BTreeSet;

use super::TransformError;
use crate::liveness::{compute_liveness, LivenessInfo};
use crate::mir::{Instruction, MachineFunction, Opcode, Operand, ProgramPoint, VReg};

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub function: MachineFunction,
    /// Name of the half covering the definition up to the split point.
    pub v_prime: String,
    /// Name of the half starting at the inserted move.
    pub v_double: String,
    /// Point of `v'' = mov v'` in the new function.
    pub split_move: ProgramPoint,
    /// Points of the `v' = mov v''` repairs on edges into frontier blocks.
    pub repair_moves: Vec<ProgramPoint>,
    pub liveness: LivenessInfo,
}

impl SplitResult {
    pub fn moves(&self) -> Vec<ProgramPoint> {
        let mut m = vec![self.split_move];
        m.extend(&self.repair_moves);
        m
    }
}

/// Points at which `v` may be split: its access points other than the first,
/// excluding block terminators (nothing can follow them in the block).
pub fn splittable_points(f: &MachineFunction, info: &LivenessInfo, v: &str) -> Vec<ProgramPoint> {
    let Some(ks) = info.uses.get(v) else {
        return Vec::new();
    };
    ks.iter()
        .skip(1)
        .copied()
        .filter(|&k| f.instruction_at(k).is_some_and(|i| !i.opcode.is_terminator()))
        .collect()
}

fn rename(op: &mut Operand, from: &str, to: &str) {
    if let Operand::Virtual(v) = op {
        if v.name == from {
            v.name = to.to_string();
        }
    }
}

fn rename_inst(inst: &mut Instruction, from: &str, to: &str) {
    for op in inst.operands_mut() {
        rename(op, from, to);
    }
}

/// Per block: is `name` read before being written on some path from the block entry.
fn live_in_blocks(f: &MachineFunction, name: &str) -> Vec<bool> {
    let cfg = f.cfg();
    let nb = f.blocks.len();
    let mut gen = vec![false; nb];
    let mut kill = vec![false; nb];
    for (b, block) in f.blocks.iter().enumerate() {
        for inst in &block.insts {
            if inst.uses_vreg(name) && !kill[b] {
                gen[b] = true;
            }
            if inst.defines_vreg(name) {
                kill[b] = true;
            }
        }
    }
    let mut live = gen.clone();
    let mut changed = true;
    while changed {
        changed = false;
        for b in (0..nb).rev() {
            let out = cfg.succs[b].iter().any(|&s| live[s]);
            let inn = gen[b] || (out && !kill[b]);
            if inn != live[b] {
                live[b] = inn;
                changed = true;
            }
        }
    }
    live
}

fn two_fresh_names(f: &MachineFunction, base: &str) -> (String, String) {
    let existing = f.vregs();
    let mut found = Vec::new();
    let mut n = 1;
    while found.len() < 2 {
        let c = format!("{base}.{n}");
        if !existing.contains_key(&c) {
            found.push(c);
        }
        n += 1;
    }
    (found[0].clone(), found[1].clone())
}

fn point_of(f: &MachineFunction, block: usize, idx: usize) -> ProgramPoint {
    let before: usize = f.blocks[..block].iter().map(|b| b.insts.len()).sum();
    (before + idx + 1) as ProgramPoint
}

/// Splits the live range of `v` at access point `k`.
///
/// Every occurrence of `v` is renamed to `v'`; `v'' = mov v'` is inserted
/// right after `k`, and occurrences in the rest of `k`'s block and in all
/// blocks it strictly dominates become `v''`. Where control leaves that
/// region into a dominance-frontier block that still reads `v'`, the
/// region-side predecessor gets a repair `v' = mov v''` before its
/// terminator. A loop whose header holds `k` is its own frontier, so the
/// repair lands on the back edge.
pub fn split_live_range(
    f: &MachineFunction,
    v: &str,
    k: ProgramPoint,
) -> Result<SplitResult, TransformError> {
    let types = f.vregs();
    let Some(ty) = types.get(v).cloned() else {
        return Err(if f.physregs().contains(v) {
            TransformError::Physical(v.to_string())
        } else {
            TransformError::UnknownVreg(v.to_string())
        });
    };
    let info = compute_liveness(f);
    let ks = &info.uses[v];
    if ks.len() < 2 {
        return Err(TransformError::SingleAccess(v.to_string()));
    }
    if !ks.contains(&k) {
        return Err(TransformError::NotAUsePoint {
            vreg: v.to_string(),
            point: k,
        });
    }
    let bad = |reason| TransformError::BadSplitPoint {
        vreg: v.to_string(),
        point: k,
        reason,
    };
    if k == ks[0] {
        return Err(bad("it is the first definition"));
    }
    if f.instruction_at(k).is_some_and(|i| i.opcode.is_terminator()) {
        return Err(bad("it is a block terminator"));
    }

    let (v1, v2) = two_fresh_names(f, v);
    let mut g = f.clone();
    for p in &mut g.params {
        rename(p, v, &v1);
    }
    for block in &mut g.blocks {
        for inst in &mut block.insts {
            rename_inst(inst, v, &v1);
        }
    }
    let (b, idx) = f.locate(k).expect("k is a point of f");
    let op1 = Operand::Virtual(VReg::new(v1.clone(), ty.clone()));
    let op2 = Operand::Virtual(VReg::new(v2.clone(), ty.clone()));
    g.blocks[b].insts.insert(
        idx + 1,
        Instruction::new(Opcode::Mov, vec![op2.clone()], vec![op1.clone()]),
    );

    let cfg = g.cfg();
    let dom = cfg.dominators();
    let in_region = |x: usize| x == b || dom.strictly_dominates(b, x);
    for inst in &mut g.blocks[b].insts[idx + 2..] {
        rename_inst(inst, &v1, &v2);
    }
    for x in 0..g.blocks.len() {
        if x != b && dom.strictly_dominates(b, x) {
            for inst in &mut g.blocks[x].insts {
                rename_inst(inst, &v1, &v2);
            }
        }
    }

    let live = live_in_blocks(&g, &v1);
    let frontier = dom.frontiers(&cfg);
    let mut repair_preds = BTreeSet::new();
    for &x in &frontier[b] {
        if !live[x] {
            continue;
        }
        for &p in &cfg.preds[x] {
            if cfg.reachable[p] && in_region(p) {
                repair_preds.insert(p);
            }
        }
    }
    let mut repair_at = Vec::new();
    for &p in &repair_preds {
        let insts = &mut g.blocks[p].insts;
        let pos = if insts.last().is_some_and(|i| i.opcode.is_terminator()) {
            insts.len() - 1
        } else {
            insts.len()
        };
        insts.insert(
            pos,
            Instruction::new(Opcode::Mov, vec![op1.clone()], vec![op2.clone()]),
        );
        repair_at.push((p, pos));
    }
    g.finish()?;
    let split_move = point_of(&g, b, idx + 1);
    let repair_moves = repair_at
        .iter()
        .map(|&(p, pos)| point_of(&g, p, pos))
        .collect();
    let liveness = compute_liveness(&g);
    Ok(SplitResult {
        function: g,
        v_prime: v1,
        v_double: v2,
        split_move,
        repair_moves,
        liveness,
    })
}
