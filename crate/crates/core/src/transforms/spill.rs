use super::TransformError;
use crate::mir::{BasicBlock, Instruction, MachineFunction, Opcode, Operand, VReg};

#[derive(Debug, Clone)]
pub struct SpillResult {
    pub function: MachineFunction,
    pub slot: u32,
    /// Fresh short-lived vregs carrying the value to and from the slot.
    pub temps: Vec<String>,
    pub loads: usize,
    pub stores: usize,
}

/// Moves `v` to a fresh stack slot. Each instruction reading `v` is preceded
/// by a load into its own temporary; each instruction writing `v` writes a
/// temporary that is stored right after. A spilled parameter is stored on
/// entry.
pub fn insert_spill(f: &MachineFunction, v: &str) -> Result<SpillResult, TransformError> {
    let types = f.vregs();
    let Some(ty) = types.get(v).cloned() else {
        return Err(if f.physregs().contains(v) {
            TransformError::Physical(v.to_string())
        } else {
            TransformError::UnknownVreg(v.to_string())
        });
    };
    let slot = f.max_slot().map_or(0, |s| s + 1);
    let slot_op = Operand::Slot(slot);
    let mut g = f.clone();
    let mut temps: Vec<String> = Vec::new();
    let mut taken = types;
    let mut fresh = |temps: &mut Vec<String>| {
        let mut n = 1;
        let name = loop {
            let c = format!("{v}.s{n}");
            if !taken.contains_key(&c) {
                break c;
            }
            n += 1;
        };
        taken.insert(name.clone(), ty.clone());
        temps.push(name.clone());
        Operand::Virtual(VReg::new(name, ty.clone()))
    };
    let (mut loads, mut stores) = (0, 0);

    for block in &mut g.blocks {
        let mut out = Vec::with_capacity(block.insts.len());
        for mut inst in std::mem::take(&mut block.insts) {
            let mut after = None;
            if inst.uses_vreg(v) {
                let t = fresh(&mut temps);
                for u in &mut inst.uses {
                    if u.is_vreg_named(v) {
                        *u = t.clone();
                    }
                }
                out.push(Instruction::new(Opcode::Load, vec![t], vec![slot_op.clone()]));
                loads += 1;
            }
            if inst.defines_vreg(v) {
                let t = fresh(&mut temps);
                for d in &mut inst.defs {
                    if d.is_vreg_named(v) {
                        *d = t.clone();
                    }
                }
                after = Some(Instruction::new(Opcode::Store, vec![], vec![t, slot_op.clone()]));
                stores += 1;
            }
            out.push(inst);
            out.extend(after);
        }
        block.insts = out;
    }

    if let Some(pos) = g.params.iter().position(|p| p.is_vreg_named(v)) {
        let t = fresh(&mut temps);
        g.params[pos] = t.clone();
        let store = Instruction::new(Opcode::Store, vec![], vec![t, slot_op.clone()]);
        stores += 1;
        if g.cfg().preds[0].is_empty() {
            g.blocks[0].insts.insert(0, store);
        } else {
            // The entry block is a loop header: store once in a new preheader.
            let mut label = "entry".to_string();
            let mut n = 0;
            while g.block_index(&label).is_some() {
                n += 1;
                label = format!("entry.{n}");
            }
            g.blocks.insert(0, BasicBlock::new(label, vec![store]));
        }
    }
    g.finish()?;
    Ok(SpillResult {
        function: g,
        slot,
        temps,
        loads,
        stores,
    })
}
