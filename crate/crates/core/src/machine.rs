//! Abstract target machines: register types, congruence classes (registers
//! that are chunks of the same storage) and a per-opcode latency table used
//! as the throughput estimate.
//!
//! Descriptions are TOML documents with the top-level keys `name`,
//! `congruence_classes`, `registers`, `types` and `opcodes`; see
//! `data/x86like.toml` for a complete example.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mir::{MachineFunction, Opcode, Operand, ProgramPoint};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("machine description parse error: {0}")]
    Parse(String),
    #[error("invalid machine description: {0}")]
    Validation(String),
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
    #[error("unknown register type `{0}`")]
    UnknownType(String),
    #[error("unknown machine `{0}`")]
    UnknownMachine(String),
    #[error("virtual register %{vreg} at point {point} in a function expected to be fully physical")]
    VirtualRegister { vreg: String, point: ProgramPoint },
    #[error("point {point}: {msg}")]
    Constraint { point: ProgramPoint, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    Gpr,
    Fpr,
}

/// A register type `t` together with its ordered register set `R^t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterType {
    pub id: String,
    pub width: u32,
    pub kind: RegKind,
    pub registers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysReg {
    pub id: String,
    #[serde(rename = "type")]
    pub type_id: String,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpcodeInfo {
    pub latency: u64,
    #[serde(default, rename = "mem")]
    pub is_mem: bool,
    /// `(operand slot, register)`: slot indices count defs first, then uses.
    #[serde(default)]
    pub fixed: Vec<FixedOperand>,
    #[serde(default)]
    pub clobbers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedOperand {
    pub operand: usize,
    pub register: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    name: String,
    types: Vec<TypeDoc>,
    registers: Vec<PhysReg>,
    congruence_classes: Vec<Vec<String>>,
    #[serde(default)]
    opcodes: BTreeMap<String, OpcodeInfo>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TypeDoc {
    id: String,
    width: u32,
    kind: RegKind,
}

#[derive(Debug, Clone)]
pub struct MachineDescription {
    pub name: String,
    pub types: Vec<RegisterType>,
    pub registers: Vec<PhysReg>,
    /// Congruence classes, each ordered from narrowest to widest member.
    pub classes: Vec<Vec<String>>,
    pub opcodes: BTreeMap<Opcode, OpcodeInfo>,
    reg_index: HashMap<String, usize>,
    class_of: Vec<usize>,
}

pub const DEFAULT_MEM_LATENCY: u64 = 4;
pub const DEFAULT_ALU_LATENCY: u64 = 1;
pub const DEFAULT_MUL_LATENCY: u64 = 3;
pub const DEFAULT_DIV_LATENCY: u64 = 10;

fn default_opcode(op: Opcode) -> OpcodeInfo {
    let (latency, is_mem) = match op {
        Opcode::Load | Opcode::Store => (DEFAULT_MEM_LATENCY, true),
        Opcode::Mul => (DEFAULT_MUL_LATENCY, false),
        Opcode::Div => (DEFAULT_DIV_LATENCY, false),
        _ => (DEFAULT_ALU_LATENCY, false),
    };
    OpcodeInfo {
        latency,
        is_mem,
        ..OpcodeInfo::default()
    }
}

fn invalid(msg: impl Into<String>) -> MachineError {
    MachineError::Validation(msg.into())
}

/// Parses and validates a machine-description document.
pub fn load_machine_description(text: &str) -> Result<MachineDescription, MachineError> {
    let doc: Document = toml::from_str(text).map_err(|e| MachineError::Parse(e.to_string()))?;
    let mut opcodes = BTreeMap::new();
    for (name, info) in doc.opcodes {
        let op = Opcode::from_spelling(&name)
            .filter(|o| o.mnemonic() == name)
            .ok_or_else(|| invalid(format!("opcodes.{name}: unknown opcode")))?;
        if info.latency == 0 {
            return Err(invalid(format!("opcodes.{name}.latency must be positive")));
        }
        opcodes.insert(op, info);
    }
    let types = doc
        .types
        .into_iter()
        .map(|t| RegisterType {
            id: t.id,
            width: t.width,
            kind: t.kind,
            registers: Vec::new(),
        })
        .collect();
    MachineDescription::build(doc.name, types, doc.registers, doc.congruence_classes, opcodes)
}

impl MachineDescription {
    fn build(
        name: String,
        mut types: Vec<RegisterType>,
        registers: Vec<PhysReg>,
        classes: Vec<Vec<String>>,
        mut opcodes: BTreeMap<Opcode, OpcodeInfo>,
    ) -> Result<Self, MachineError> {
        let mut reg_index = HashMap::new();
        for (i, r) in registers.iter().enumerate() {
            if reg_index.insert(r.id.clone(), i).is_some() {
                return Err(invalid(format!("register `{}` declared twice", r.id)));
            }
        }
        let mut type_pos = HashMap::new();
        for (i, t) in types.iter().enumerate() {
            if type_pos.insert(t.id.clone(), i).is_some() {
                return Err(invalid(format!("type `{}` declared twice", t.id)));
            }
        }
        for r in &registers {
            let ti = *type_pos.get(&r.type_id).ok_or_else(|| {
                invalid(format!("register `{}` has unknown type `{}`", r.id, r.type_id))
            })?;
            if types[ti].width != r.width {
                return Err(invalid(format!(
                    "register `{}` is {} bits wide but type `{}` is {} bits",
                    r.id, r.width, r.type_id, types[ti].width
                )));
            }
            types[ti].registers.push(r.id.clone());
        }
        if let Some(t) = types.iter().find(|t| t.registers.is_empty()) {
            return Err(invalid(format!("type `{}` has no registers", t.id)));
        }
        let mut class_of = vec![usize::MAX; registers.len()];
        for (ci, class) in classes.iter().enumerate() {
            if class.is_empty() {
                return Err(invalid(format!("congruence class {ci} is empty")));
            }
            let mut prev_width = 0;
            for member in class {
                let ri = *reg_index.get(member).ok_or_else(|| {
                    invalid(format!("congruence class {ci} names unknown register `{member}`"))
                })?;
                if class_of[ri] != usize::MAX {
                    return Err(invalid(format!(
                        "register `{member}` belongs to congruence classes {} and {ci}",
                        class_of[ri]
                    )));
                }
                class_of[ri] = ci;
                if registers[ri].width <= prev_width {
                    return Err(invalid(format!(
                        "congruence class {ci} is not ordered by strictly increasing width at `{member}`"
                    )));
                }
                prev_width = registers[ri].width;
            }
        }
        if let Some(ri) = class_of.iter().position(|&c| c == usize::MAX) {
            return Err(invalid(format!(
                "register `{}` belongs to no congruence class",
                registers[ri].id
            )));
        }
        for (op, info) in &opcodes {
            for r in info
                .fixed
                .iter()
                .map(|f| &f.register)
                .chain(info.clobbers.iter())
            {
                if !reg_index.contains_key(r) {
                    return Err(invalid(format!("opcodes.{op} names unknown register `{r}`")));
                }
            }
        }
        for op in Opcode::ALL {
            opcodes.entry(op).or_insert_with(|| default_opcode(op));
        }
        Ok(MachineDescription {
            name,
            types,
            registers,
            classes,
            opcodes,
            reg_index,
            class_of,
        })
    }

    /// One register type with `n` interchangeable registers `r0..r{n-1}`,
    /// each its own congruence class, and default latencies.
    pub fn single_type(name: &str, type_id: &str, width: u32, n: usize) -> Self {
        let registers: Vec<PhysReg> = (0..n)
            .map(|i| PhysReg {
                id: format!("r{i}"),
                type_id: type_id.to_string(),
                width,
            })
            .collect();
        let classes = registers.iter().map(|r| vec![r.id.clone()]).collect();
        let types = vec![RegisterType {
            id: type_id.to_string(),
            width,
            kind: RegKind::Gpr,
            registers: Vec::new(),
        }];
        Self::build(name.to_string(), types, registers, classes, BTreeMap::new())
            .expect("well-formed single-type machine")
    }

    pub fn x86like() -> Self {
        load_machine_description(include_str!("../data/x86like.toml")).expect("shipped description")
    }

    pub fn arm64like() -> Self {
        load_machine_description(include_str!("../data/arm64like.toml"))
            .expect("shipped description")
    }

    pub fn tiny3() -> Self {
        load_machine_description(include_str!("../data/tiny3.toml")).expect("shipped description")
    }

    /// Looks up a shipped description by name.
    pub fn builtin(name: &str) -> Result<Self, MachineError> {
        match name {
            "x86like" => Ok(Self::x86like()),
            "arm64like" => Ok(Self::arm64like()),
            "tiny3" => Ok(Self::tiny3()),
            other => Err(MachineError::UnknownMachine(other.to_string())),
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["x86like", "arm64like", "tiny3"]
    }

    pub fn reg(&self, id: &str) -> Option<&PhysReg> {
        self.reg_index.get(id).map(|&i| &self.registers[i])
    }

    pub fn class_of(&self, id: &str) -> Option<usize> {
        self.reg_index.get(id).map(|&i| self.class_of[i])
    }

    pub fn reg_type(&self, type_id: &str) -> Option<&RegisterType> {
        self.types.iter().find(|t| t.id == type_id)
    }

    /// `R^t`, in declaration order.
    pub fn regs_of_type(&self, type_id: &str) -> Result<&[String], MachineError> {
        self.reg_type(type_id)
            .map(|t| t.registers.as_slice())
            .ok_or_else(|| MachineError::UnknownType(type_id.to_string()))
    }

    /// True iff both registers are chunks of the same physical storage.
    pub fn aliases(&self, r1: &str, r2: &str) -> Result<bool, MachineError> {
        let c1 = self
            .class_of(r1)
            .ok_or_else(|| MachineError::UnknownRegister(r1.to_string()))?;
        let c2 = self
            .class_of(r2)
            .ok_or_else(|| MachineError::UnknownRegister(r2.to_string()))?;
        Ok(c1 == c2)
    }

    pub fn latency(&self, op: Opcode) -> u64 {
        self.opcodes[&op].latency
    }

    pub fn call_clobbers(&self) -> &[String] {
        &self.opcodes[&Opcode::Call].clobbers
    }

    /// Whether `r` shares storage with a register clobbered by `call`.
    pub fn is_call_clobbered(&self, r: &str) -> bool {
        let Some(c) = self.class_of(r) else {
            return false;
        };
        self.call_clobbers()
            .iter()
            .any(|x| self.class_of(x) == Some(c))
    }

    /// Sum over instructions of `latency(opcode) * 10^loop_depth`. Lower cost
    /// means higher throughput.
    pub fn estimate_throughput(&self, f: &MachineFunction) -> Result<u64, MachineError> {
        let mut cost = 0u64;
        for inst in f.instructions() {
            if let Some(v) = inst.operands().find_map(|o| o.vreg()) {
                return Err(MachineError::VirtualRegister {
                    vreg: v.name.clone(),
                    point: inst.point,
                });
            }
            cost += self.latency(inst.opcode) * 10u64.pow(inst.loop_depth);
        }
        if let Some(Operand::Virtual(v)) = f.params.iter().find(|p| p.vreg().is_some()) {
            return Err(MachineError::VirtualRegister {
                vreg: v.name.clone(),
                point: 0,
            });
        }
        Ok(cost)
    }

    /// Checks that a function only uses this machine's types and registers
    /// and honours fixed-register and call-clobber declarations.
    pub fn check_function(&self, f: &MachineFunction) -> Result<(), MachineError> {
        for p in &f.params {
            self.check_operand(p)?;
        }
        for inst in f.instructions() {
            for op in inst.operands() {
                self.check_operand(op)?;
            }
            let info = &self.opcodes[&inst.opcode];
            let slots: Vec<&Operand> = inst.operands().collect();
            for fixed in &info.fixed {
                match slots.get(fixed.operand) {
                    Some(Operand::Physical(r)) if *r == fixed.register => {}
                    _ => {
                        return Err(MachineError::Constraint {
                            point: inst.point,
                            msg: format!(
                                "`{}` requires operand {} to be ${}",
                                inst.opcode, fixed.operand, fixed.register
                            ),
                        })
                    }
                }
            }
            if inst.opcode == Opcode::Call {
                let declared: Vec<&str> = info.clobbers.iter().map(String::as_str).collect();
                let listed: Vec<&str> = inst.defs.iter().filter_map(|o| o.physreg()).collect();
                if declared != listed {
                    return Err(MachineError::Constraint {
                        point: inst.point,
                        msg: format!("`call` must clobber exactly {declared:?}"),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_operand(&self, op: &Operand) -> Result<(), MachineError> {
        match op {
            Operand::Virtual(v) => {
                self.regs_of_type(&v.ty)?;
            }
            Operand::Physical(r) => {
                if self.reg(r).is_none() {
                    return Err(MachineError::UnknownRegister(r.clone()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::parse_function;

    fn gpr_chains(md: &MachineDescription) -> Vec<usize> {
        md.classes
            .iter()
            .filter(|c| md.reg_type(&md.reg(&c[0]).unwrap().type_id).unwrap().kind == RegKind::Gpr)
            .map(|c| c.len())
            .collect()
    }

    #[test]
    fn x86like_has_four_gpr_chains_of_four() {
        let md = MachineDescription::x86like();
        assert_eq!(gpr_chains(&md), vec![4; 4]);
        assert_eq!(md.classes[0], vec!["al", "ax", "eax", "rax"]);
    }

    #[test]
    fn arm64like_has_thirty_one_gpr_chains_of_two() {
        let md = MachineDescription::arm64like();
        assert_eq!(gpr_chains(&md), vec![2; 31]);
    }

    #[test]
    fn register_in_two_classes_is_rejected() {
        let text = r#"
name = "bad"
congruence_classes = [["a"], ["a", "b"]]
registers = [{ id = "a", type = "t", width = 32 }, { id = "b", type = "u", width = 64 }]
[[types]]
id = "t"
width = 32
kind = "gpr"
[[types]]
id = "u"
width = 64
kind = "gpr"
"#;
        let err = load_machine_description(text).unwrap_err();
        assert!(
            matches!(err, MachineError::Validation(ref m) if m.contains("belongs to congruence classes")),
            "{err}"
        );
    }

    #[test]
    fn other_invariant_violations() {
        let base = |classes: &str, regs: &str| {
            format!(
                "name = \"m\"\ncongruence_classes = {classes}\nregisters = {regs}\n[[types]]\nid = \"t\"\nwidth = 32\nkind = \"gpr\"\n"
            )
        };
        let width = base(r#"[["a"]]"#, r#"[{ id = "a", type = "t", width = 16 }]"#);
        assert!(load_machine_description(&width).is_err());
        let orphan = base(
            r#"[["a"]]"#,
            r#"[{ id = "a", type = "t", width = 32 }, { id = "b", type = "t", width = 32 }]"#,
        );
        assert!(matches!(
            load_machine_description(&orphan),
            Err(MachineError::Validation(m)) if m.contains("no congruence class")
        ));
        let unordered = base(
            r#"[["a", "b"]]"#,
            r#"[{ id = "a", type = "t", width = 32 }, { id = "b", type = "t", width = 32 }]"#,
        );
        assert!(matches!(
            load_machine_description(&unordered),
            Err(MachineError::Validation(m)) if m.contains("strictly increasing")
        ));
        assert!(matches!(
            load_machine_description("name = "),
            Err(MachineError::Parse(_))
        ));
    }

    #[test]
    fn aliasing() {
        let md = MachineDescription::x86like();
        assert!(md.aliases("eax", "rax").unwrap());
        assert!(!md.aliases("eax", "ebx").unwrap());
        assert!(md.aliases("ecx", "ecx").unwrap());
        assert!(matches!(
            md.aliases("eax", "zax"),
            Err(MachineError::UnknownRegister(_))
        ));
    }

    #[test]
    fn aliases_is_an_equivalence_on_shipped_machines() {
        for name in MachineDescription::builtin_names() {
            let md = MachineDescription::builtin(name).unwrap();
            let ids: Vec<&str> = md.registers.iter().map(|r| r.id.as_str()).collect();
            for a in &ids {
                assert!(md.aliases(a, a).unwrap());
                for b in &ids {
                    let ab = md.aliases(a, b).unwrap();
                    assert_eq!(ab, md.aliases(b, a).unwrap());
                    if ab {
                        for c in &ids {
                            if md.aliases(b, c).unwrap() {
                                assert!(md.aliases(a, c).unwrap());
                            }
                        }
                    }
                }
            }
            for t in &md.types {
                for r in &t.registers {
                    assert_eq!(md.reg(r).unwrap().width, t.width);
                }
            }
        }
    }

    #[test]
    fn throughput_examples() {
        let md = MachineDescription::x86like();
        let empty = parse_function("func f { }").unwrap();
        assert_eq!(md.estimate_throughput(&empty).unwrap(), 0);
        let f = parse_function("func f {\nbb0:\n  $eax = mov 1\n  $ebx = add $eax, 2\n  $ecx = mul $ebx, 3\n}")
            .unwrap();
        assert_eq!(md.estimate_throughput(&f).unwrap(), 5);
        let v = parse_function("func f {\nbb0:\n  %a:gr32 = mov 1\n}").unwrap();
        assert!(matches!(
            md.estimate_throughput(&v),
            Err(MachineError::VirtualRegister { .. })
        ));
    }

    #[test]
    fn loop_depth_scales_cost() {
        let md = MachineDescription::x86like();
        let f = parse_function(
            "func f {\nbb0:\n  $ebx = mov 0\nbb1:\n  $ecx = cmp $ebx, 3\n  br $ecx, bb2, bb3\nbb2:\n  $ebx = add $ebx, 1\n  jmp bb1\nbb3:\n  ret\n}",
        )
        .unwrap();
        // mov at depth 0; cmp, br, add, jmp at depth 1; ret at depth 0.
        assert_eq!(md.estimate_throughput(&f).unwrap(), 1 + 4 * 10 + 1);
    }

    #[test]
    fn fixed_constraints_are_checked() {
        let md = MachineDescription::x86like();
        let good = parse_function(include_str!("../data/running_example_x86.mir")).unwrap();
        md.check_function(&good).unwrap();
        let bad = parse_function(include_str!("../data/running_example.mir")).unwrap();
        assert!(matches!(
            md.check_function(&bad),
            Err(MachineError::Constraint { point: 5, .. })
        ));
        assert!(MachineDescription::tiny3().check_function(&bad).is_ok());
    }

    #[test]
    fn clobber_preference() {
        let md = MachineDescription::x86like();
        assert!(md.is_call_clobbered("eax"));
        assert!(md.is_call_clobbered("cl"));
        assert!(!md.is_call_clobbered("ebx"));
    }
}
