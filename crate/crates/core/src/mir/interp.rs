use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{MachineFunction, Opcode, Operand, ProgramPoint};
use crate::machine::MachineDescription;

pub const DEFAULT_FUEL: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Outputs {
    pub printed: Vec<i64>,
    pub ret: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpError {
    #[error("fuel exhausted after {0} steps")]
    FuelExhausted(u64),
    #[error("division by zero at point {0}")]
    DivisionByZero(ProgramPoint),
    #[error("read of unwritten location {location} at point {point}")]
    Unwritten {
        location: String,
        point: ProgramPoint,
    },
    #[error("function takes {expected} inputs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("unknown physical register ${0}")]
    UnknownRegister(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Loc {
    Vreg(String),
    Phys(String),
    Slot(u32),
}

impl Loc {
    fn describe(&self) -> String {
        match self {
            Loc::Vreg(v) => format!("%{v}"),
            Loc::Phys(r) => format!("${r}"),
            Loc::Slot(s) => format!("@{s}"),
        }
    }
}

struct Machine<'a> {
    f: &'a MachineFunction,
    md: Option<&'a MachineDescription>,
    store: HashMap<Loc, i64>,
}

impl Machine<'_> {
    /// Physical registers alias through their congruence class when a
    /// machine description is supplied.
    fn loc(&self, op: &Operand) -> Result<Loc, InterpError> {
        Ok(match op {
            Operand::Virtual(v) => Loc::Vreg(v.name.clone()),
            Operand::Physical(r) => match self.md {
                Some(md) => {
                    let class = md
                        .class_of(r)
                        .ok_or_else(|| InterpError::UnknownRegister(r.clone()))?;
                    Loc::Phys(format!("class{class}"))
                }
                None => Loc::Phys(r.clone()),
            },
            Operand::Slot(s) => Loc::Slot(*s),
            Operand::Imm(_) | Operand::Label(_) => unreachable!("not a location"),
        })
    }

    fn read(&self, op: &Operand, point: ProgramPoint) -> Result<i64, InterpError> {
        if let Operand::Imm(v) = op {
            return Ok(*v);
        }
        let loc = self.loc(op)?;
        self.store
            .get(&loc)
            .copied()
            .ok_or_else(|| InterpError::Unwritten {
                location: match op {
                    Operand::Physical(r) => format!("${r}"),
                    _ => loc.describe(),
                },
                point,
            })
    }

    fn write(&mut self, op: &Operand, value: i64) -> Result<(), InterpError> {
        let loc = self.loc(op)?;
        self.store.insert(loc, value);
        Ok(())
    }

    fn run(&mut self, inputs: &[i64], fuel: u64) -> Result<Outputs, InterpError> {
        let f = self.f;
        if inputs.len() != f.params.len() {
            return Err(InterpError::Arity {
                expected: f.params.len(),
                got: inputs.len(),
            });
        }
        for (p, v) in f.params.iter().zip(inputs) {
            self.write(p, *v)?;
        }
        let mut out = Outputs::default();
        let mut steps = 0u64;
        let mut block = 0usize;
        let mut idx = 0usize;
        loop {
            let Some(inst) = f.blocks[block].insts.get(idx) else {
                if block + 1 < f.blocks.len() {
                    block += 1;
                    idx = 0;
                    continue;
                }
                return Ok(out);
            };
            if steps >= fuel {
                return Err(InterpError::FuelExhausted(steps));
            }
            steps += 1;
            let p = inst.point;
            idx += 1;
            match inst.opcode {
                Opcode::Mov => {
                    let v = self.read(&inst.uses[0], p)?;
                    self.write(&inst.defs[0], v)?;
                }
                Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Div | Opcode::Cmp => {
                    let a = self.read(&inst.uses[0], p)?;
                    let b = self.read(&inst.uses[1], p)?;
                    let v = match inst.opcode {
                        Opcode::Add => a.wrapping_add(b),
                        Opcode::Sub => a.wrapping_sub(b),
                        Opcode::Mul => a.wrapping_mul(b),
                        Opcode::Div => {
                            if b == 0 {
                                return Err(InterpError::DivisionByZero(p));
                            }
                            a.wrapping_div(b)
                        }
                        _ => i64::from(a < b),
                    };
                    self.write(&inst.defs[0], v)?;
                }
                Opcode::Load => {
                    let v = self.read(&inst.uses[0], p)?;
                    self.write(&inst.defs[0], v)?;
                }
                Opcode::Store => {
                    let v = self.read(&inst.uses[0], p)?;
                    self.write(&inst.uses[1], v)?;
                }
                Opcode::Print => out.printed.push(self.read(&inst.uses[0], p)?),
                Opcode::Call => {
                    for d in &inst.defs {
                        let loc = self.loc(d)?;
                        self.store.remove(&loc);
                    }
                }
                Opcode::Ret => {
                    out.ret = match inst.uses.first() {
                        Some(op) => Some(self.read(op, p)?),
                        None => None,
                    };
                    return Ok(out);
                }
                Opcode::Jmp => {
                    block = target(f, &inst.uses[0]);
                    idx = 0;
                }
                Opcode::Br => {
                    let c = self.read(&inst.uses[0], p)?;
                    block = target(f, if c != 0 { &inst.uses[1] } else { &inst.uses[2] });
                    idx = 0;
                }
            }
        }
    }
}

fn target(f: &MachineFunction, op: &Operand) -> usize {
    match op {
        Operand::Label(l) => f.block_index(l).expect("validated branch target"),
        _ => unreachable!("validated branch operand"),
    }
}

/// Executes `f` with each physical register as its own storage location.
pub fn interpret(f: &MachineFunction, inputs: &[i64], fuel: u64) -> Result<Outputs, InterpError> {
    Machine {
        f,
        md: None,
        store: HashMap::new(),
    }
    .run(inputs, fuel)
}

/// Executes `f` with physical registers sharing storage per congruence class
/// of `md`, so writes to `$eax` are visible through `$rax`. Calls leave the
/// classes of their clobbered registers unwritten.
pub fn interpret_with_machine(
    f: &MachineFunction,
    md: &MachineDescription,
    inputs: &[i64],
    fuel: u64,
) -> Result<Outputs, InterpError> {
    Machine {
        f,
        md: Some(md),
        store: HashMap::new(),
    }
    .run(inputs, fuel)
}
