//! A small machine IR: basic blocks of three-address instructions over
//! virtual registers, pre-assigned physical registers, immediates, and
//! abstract stack slots.

mod cfg;
mod gen;
mod interp;
mod parse;
mod print;

pub use cfg::{Cfg, DominatorTree};
pub use gen::{generate_random_function, GenParams};
pub use interp::{interpret, interpret_with_machine, InterpError, Outputs, DEFAULT_FUEL};
pub use parse::parse_function;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Function-global, 1-based instruction index in textual order.
pub type ProgramPoint = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MirError {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("vreg %{vreg} used before definition at point {point}")]
    UseBeforeDef { vreg: String, point: ProgramPoint },
    #[error("vreg %{0} has no type annotation")]
    UntypedVreg(String),
    #[error("vreg %{vreg} declared with conflicting types `{first}` and `{second}`")]
    TypeConflict {
        vreg: String,
        first: String,
        second: String,
    },
    #[error("duplicate block label `{0}`")]
    DuplicateBlock(String),
    #[error("branch to unknown block `{0}`")]
    UnknownBlock(String),
    #[error("malformed instruction at point {point}: {msg}")]
    Malformed { point: ProgramPoint, msg: String },
}

/// The closed toy instruction set. Spelling variants such as `mov32` or
/// `MOV64ri` are accepted by the parser and map onto these roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opcode {
    Mov,
    Add,
    Sub,
    Mul,
    Div,
    Cmp,
    Br,
    Jmp,
    Load,
    Store,
    Print,
    Ret,
    Call,
}

impl Opcode {
    pub const ALL: [Opcode; 13] = [
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Div,
        Opcode::Cmp,
        Opcode::Br,
        Opcode::Jmp,
        Opcode::Load,
        Opcode::Store,
        Opcode::Print,
        Opcode::Ret,
        Opcode::Call,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Mov => "mov",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::Div => "div",
            Opcode::Cmp => "cmp",
            Opcode::Br => "br",
            Opcode::Jmp => "jmp",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Print => "print",
            Opcode::Ret => "ret",
            Opcode::Call => "call",
        }
    }

    /// Grouped token used by the embedding vocabulary (`MOV`, `DIV`, ...).
    pub fn group_token(self) -> String {
        self.mnemonic().to_ascii_uppercase()
    }

    /// Maps a possibly width/addressing-suffixed spelling onto its root:
    /// `mov`, `mov32`, `MOV64ri`, `movrr` all group to [`Opcode::Mov`].
    pub fn from_spelling(spelling: &str) -> Option<Opcode> {
        let lower = spelling.to_ascii_lowercase();
        let mut best: Option<Opcode> = None;
        for op in Opcode::ALL {
            let root = op.mnemonic();
            if let Some(rest) = lower.strip_prefix(root) {
                let digits_end = rest
                    .find(|c: char| !c.is_ascii_digit())
                    .unwrap_or(rest.len());
                let suffix = &rest[digits_end..];
                if suffix.chars().all(|c| matches!(c, 'r' | 'i' | 'm')) {
                    match best {
                        Some(b) if b.mnemonic().len() >= root.len() => {}
                        _ => best = Some(op),
                    }
                }
            }
        }
        best
    }

    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Br | Opcode::Jmp | Opcode::Ret)
    }

    pub fn is_memory(self) -> bool {
        matches!(self, Opcode::Load | Opcode::Store)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VReg {
    pub name: String,
    pub ty: String,
}

impl VReg {
    pub fn new(name: impl Into<String>, ty: impl Into<String>) -> Self {
        VReg {
            name: name.into(),
            ty: ty.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Operand {
    Virtual(VReg),
    Physical(String),
    Imm(i64),
    Slot(u32),
    Label(String),
}

impl Operand {
    pub fn vreg(&self) -> Option<&VReg> {
        match self {
            Operand::Virtual(v) => Some(v),
            _ => None,
        }
    }

    pub fn physreg(&self) -> Option<&str> {
        match self {
            Operand::Physical(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_vreg_named(&self, name: &str) -> bool {
        matches!(self, Operand::Virtual(v) if v.name == name)
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Virtual(v) => write!(f, "%{}:{}", v.name, v.ty),
            Operand::Physical(r) => write!(f, "${r}"),
            Operand::Imm(i) => write!(f, "{i}"),
            Operand::Slot(s) => write!(f, "@{s}"),
            Operand::Label(l) => f.write_str(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub opcode: Opcode,
    /// Original spelling when it differs from the root mnemonic.
    pub spelling: Option<String>,
    pub defs: Vec<Operand>,
    pub uses: Vec<Operand>,
    pub point: ProgramPoint,
    pub loop_depth: u32,
}

impl Instruction {
    pub fn new(opcode: Opcode, defs: Vec<Operand>, uses: Vec<Operand>) -> Self {
        Instruction {
            opcode,
            spelling: None,
            defs,
            uses,
            point: 0,
            loop_depth: 0,
        }
    }

    /// Operands in slot order: defs first, then uses. Fixed-register
    /// constraint indices refer to this order.
    pub fn operands(&self) -> impl Iterator<Item = &Operand> {
        self.defs.iter().chain(self.uses.iter())
    }

    pub fn operands_mut(&mut self) -> impl Iterator<Item = &mut Operand> {
        self.defs.iter_mut().chain(self.uses.iter_mut())
    }

    pub fn defines_vreg(&self, name: &str) -> bool {
        self.defs.iter().any(|o| o.is_vreg_named(name))
    }

    pub fn uses_vreg(&self, name: &str) -> bool {
        self.uses.iter().any(|o| o.is_vreg_named(name))
    }

    pub fn accesses_vreg(&self, name: &str) -> bool {
        self.defines_vreg(name) || self.uses_vreg(name)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.uses.iter().filter_map(|o| match o {
            Operand::Label(l) => Some(l.as_str()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub label: String,
    pub insts: Vec<Instruction>,
}

impl BasicBlock {
    pub fn new(label: impl Into<String>, insts: Vec<Instruction>) -> Self {
        BasicBlock {
            label: label.into(),
            insts,
        }
    }

    pub fn terminator(&self) -> Option<&Instruction> {
        self.insts.last().filter(|i| i.opcode.is_terminator())
    }
}

/// A validated function. Construct through [`MachineFunction::new`] (or the
/// parser), which assigns program points and loop depths and runs the
/// structural checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineFunction {
    pub name: String,
    pub params: Vec<Operand>,
    pub blocks: Vec<BasicBlock>,
}

impl MachineFunction {
    pub fn new(
        name: impl Into<String>,
        params: Vec<Operand>,
        mut blocks: Vec<BasicBlock>,
    ) -> Result<Self, MirError> {
        if blocks.is_empty() {
            blocks.push(BasicBlock::new("bb0", Vec::new()));
        }
        let mut f = MachineFunction {
            name: name.into(),
            params,
            blocks,
        };
        f.finish()?;
        Ok(f)
    }

    /// Re-derives points and loop depths and re-validates. Transforms call
    /// this after editing blocks in place.
    pub fn finish(&mut self) -> Result<(), MirError> {
        self.check_structure()?;
        let mut point = 0;
        for block in &mut self.blocks {
            for inst in &mut block.insts {
                point += 1;
                inst.point = point;
            }
        }
        let cfg = Cfg::new(self);
        let depths = cfg.loop_depths();
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for inst in &mut block.insts {
                inst.loop_depth = depths[b];
            }
        }
        self.check_types()?;
        self.check_definite_assignment(&cfg)?;
        Ok(())
    }

    pub fn entry(&self) -> usize {
        0
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.blocks.iter().flat_map(|b| b.insts.iter())
    }

    pub fn num_points(&self) -> u32 {
        self.blocks.iter().map(|b| b.insts.len() as u32).sum()
    }

    pub fn instruction_at(&self, point: ProgramPoint) -> Option<&Instruction> {
        self.instructions().nth(point.checked_sub(1)? as usize)
    }

    /// Block index and in-block position of a program point.
    pub fn locate(&self, point: ProgramPoint) -> Option<(usize, usize)> {
        let mut remaining = point.checked_sub(1)? as usize;
        for (b, block) in self.blocks.iter().enumerate() {
            if remaining < block.insts.len() {
                return Some((b, remaining));
            }
            remaining -= block.insts.len();
        }
        None
    }

    /// All vregs (params included) with their types, ordered by name.
    pub fn vregs(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let ops = self
            .params
            .iter()
            .chain(self.instructions().flat_map(|i| i.operands()));
        for op in ops {
            if let Operand::Virtual(v) = op {
                out.entry(v.name.clone()).or_insert_with(|| v.ty.clone());
            }
        }
        out
    }

    pub fn physregs(&self) -> BTreeSet<String> {
        self.params
            .iter()
            .chain(self.instructions().flat_map(|i| i.operands()))
            .filter_map(|o| o.physreg().map(str::to_string))
            .collect()
    }

    pub fn has_vregs(&self) -> bool {
        !self.vregs().is_empty()
    }

    pub fn max_slot(&self) -> Option<u32> {
        self.instructions()
            .flat_map(|i| i.operands())
            .filter_map(|o| match o {
                Operand::Slot(s) => Some(*s),
                _ => None,
            })
            .max()
    }

    /// A vreg name not yet present in the function, derived from `base`.
    pub fn fresh_vreg_name(&self, base: &str) -> String {
        let existing = self.vregs();
        let mut n = 1;
        loop {
            let candidate = format!("{base}.{n}");
            if !existing.contains_key(&candidate) {
                return candidate;
            }
            n += 1;
        }
    }

    fn check_structure(&self) -> Result<(), MirError> {
        let mut seen = BTreeSet::new();
        for b in &self.blocks {
            if !seen.insert(b.label.as_str()) {
                return Err(MirError::DuplicateBlock(b.label.clone()));
            }
        }
        let mut point = 0;
        for b in &self.blocks {
            for (idx, inst) in b.insts.iter().enumerate() {
                point += 1;
                let malformed = |msg: &str| MirError::Malformed {
                    point,
                    msg: msg.to_string(),
                };
                if inst.opcode.is_terminator() && idx + 1 != b.insts.len() {
                    return Err(malformed("terminator must end its block"));
                }
                for l in inst.labels() {
                    if !seen.contains(l) {
                        return Err(MirError::UnknownBlock(l.to_string()));
                    }
                }
                check_shape(inst).map_err(|m| malformed(&m))?;
            }
        }
        Ok(())
    }

    fn check_types(&self) -> Result<(), MirError> {
        let mut types: BTreeMap<&str, &str> = BTreeMap::new();
        let ops = self
            .params
            .iter()
            .chain(self.instructions().flat_map(|i| i.operands()));
        for op in ops {
            if let Operand::Virtual(v) = op {
                if let Some(prev) = types.insert(&v.name, &v.ty) {
                    if prev != v.ty {
                        return Err(MirError::TypeConflict {
                            vreg: v.name.clone(),
                            first: prev.to_string(),
                            second: v.ty.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Every vreg read must be preceded by a write on every path from entry.
    /// This is the non-SSA generalisation of "each use is dominated by a def".
    fn check_definite_assignment(&self, cfg: &Cfg) -> Result<(), MirError> {
        let names: Vec<String> = self.vregs().into_keys().collect();
        let index: BTreeMap<&str, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let n = names.len();
        if n == 0 {
            return Ok(());
        }
        let nb = self.blocks.len();
        let full = vec![true; n];
        let mut entry_set = vec![false; n];
        for p in &self.params {
            if let Operand::Virtual(v) = p {
                entry_set[index[v.name.as_str()]] = true;
            }
        }
        // Must-defined on entry to each block; start from top for reachable blocks.
        let mut ins: Vec<Vec<bool>> = vec![full.clone(); nb];
        ins[0] = entry_set.clone();
        let transfer = |b: usize, mut set: Vec<bool>| {
            for inst in &self.blocks[b].insts {
                for d in &inst.defs {
                    if let Operand::Virtual(v) = d {
                        set[index[v.name.as_str()]] = true;
                    }
                }
            }
            set
        };
        let order = cfg.reverse_postorder();
        let mut changed = true;
        while changed {
            changed = false;
            for &b in &order {
                let new_in = if b == 0 {
                    let mut s = entry_set.clone();
                    // A back edge into the entry block intersects with the entry state.
                    for &p in &cfg.preds[b] {
                        if cfg.reachable[p] {
                            let out = transfer(p, ins[p].clone());
                            for i in 0..n {
                                s[i] &= out[i];
                            }
                        }
                    }
                    s
                } else {
                    let mut s = full.clone();
                    for &p in &cfg.preds[b] {
                        if cfg.reachable[p] {
                            let out = transfer(p, ins[p].clone());
                            for i in 0..n {
                                s[i] &= out[i];
                            }
                        }
                    }
                    s
                };
                if new_in != ins[b] {
                    ins[b] = new_in;
                    changed = true;
                }
            }
        }
        for &b in &order {
            let mut set = ins[b].clone();
            for inst in &self.blocks[b].insts {
                for u in &inst.uses {
                    if let Operand::Virtual(v) = u {
                        if !set[index[v.name.as_str()]] {
                            return Err(MirError::UseBeforeDef {
                                vreg: v.name.clone(),
                                point: inst.point,
                            });
                        }
                    }
                }
                for d in &inst.defs {
                    if let Operand::Virtual(v) = d {
                        set[index[v.name.as_str()]] = true;
                    }
                }
            }
        }
        Ok(())
    }
}

fn is_value(op: &Operand) -> bool {
    matches!(op, Operand::Virtual(_) | Operand::Physical(_) | Operand::Imm(_))
}

fn is_reg(op: &Operand) -> bool {
    matches!(op, Operand::Virtual(_) | Operand::Physical(_))
}

fn check_shape(inst: &Instruction) -> Result<(), String> {
    let d = &inst.defs;
    let u = &inst.uses;
    let ok = match inst.opcode {
        Opcode::Mov => d.len() == 1 && is_reg(&d[0]) && u.len() == 1 && is_value(&u[0]),
        Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Div | Opcode::Cmp => {
            d.len() == 1 && is_reg(&d[0]) && u.len() == 2 && u.iter().all(is_value)
        }
        Opcode::Br => {
            d.is_empty()
                && u.len() == 3
                && is_value(&u[0])
                && matches!(u[1], Operand::Label(_))
                && matches!(u[2], Operand::Label(_))
        }
        Opcode::Jmp => d.is_empty() && u.len() == 1 && matches!(u[0], Operand::Label(_)),
        Opcode::Load => {
            d.len() == 1 && is_reg(&d[0]) && u.len() == 1 && matches!(u[0], Operand::Slot(_))
        }
        Opcode::Store => {
            d.is_empty() && u.len() == 2 && is_value(&u[0]) && matches!(u[1], Operand::Slot(_))
        }
        Opcode::Print => d.is_empty() && u.len() == 1 && is_value(&u[0]),
        Opcode::Ret => d.is_empty() && u.len() <= 1 && u.iter().all(is_value),
        Opcode::Call => u.is_empty() && d.iter().all(|o| matches!(o, Operand::Physical(_))),
    };
    if ok {
        Ok(())
    } else {
        Err(format!("bad operand shape for `{}`", inst.opcode))
    }
}

impl fmt::Display for MachineFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_function(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opcode_spelling_groups_to_root() {
        assert_eq!(Opcode::from_spelling("mov32"), Some(Opcode::Mov));
        assert_eq!(Opcode::from_spelling("MOV64ri"), Some(Opcode::Mov));
        assert_eq!(Opcode::from_spelling("movrr"), Some(Opcode::Mov));
        assert_eq!(Opcode::from_spelling("call"), Some(Opcode::Call));
        assert_eq!(Opcode::from_spelling("cmp32rr"), Some(Opcode::Cmp));
        assert_eq!(Opcode::from_spelling("movzx"), None);
        assert_eq!(Opcode::from_spelling("frob"), None);
    }

    #[test]
    fn empty_body_gives_single_empty_block() {
        let f = MachineFunction::new("empty", vec![], vec![]).unwrap();
        assert_eq!(f.blocks.len(), 1);
        assert!(f.blocks[0].insts.is_empty());
        assert_eq!(f.num_points(), 0);
    }

    #[test]
    fn locate_maps_points_to_blocks() {
        let f = parse_function(
            "func f {\nbb0:\n  %a:gr32 = mov 1\n  jmp bb1\nbb1:\n  print %a:gr32\n}",
        )
        .unwrap();
        assert_eq!(f.locate(1), Some((0, 0)));
        assert_eq!(f.locate(2), Some((0, 1)));
        assert_eq!(f.locate(3), Some((1, 0)));
        assert_eq!(f.locate(4), None);
        assert_eq!(f.locate(0), None);
    }

    #[test]
    fn fresh_names_do_not_collide() {
        let f = parse_function("func f {\nbb0:\n  %a:gr32 = mov 1\n  %a.1:gr32 = mov 2\n}").unwrap();
        assert_eq!(f.fresh_vreg_name("a"), "a.2");
    }
}
