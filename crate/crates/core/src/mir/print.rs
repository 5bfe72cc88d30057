use std::fmt;

use super::{Instruction, MachineFunction, Opcode};

pub(super) fn write_function(f: &MachineFunction, out: &mut fmt::Formatter<'_>) -> fmt::Result {
    write!(out, "func {}", f.name)?;
    if !f.params.is_empty() {
        let ps: Vec<String> = f.params.iter().map(|p| p.to_string()).collect();
        write!(out, "({})", ps.join(", "))?;
    }
    writeln!(out, " {{")?;
    for block in &f.blocks {
        writeln!(out, "{}:", block.label)?;
        for inst in &block.insts {
            writeln!(out, "  {inst}")?;
        }
    }
    write!(out, "}}")
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.spelling.as_deref().unwrap_or(self.opcode.mnemonic());
        let join = |ops: &[super::Operand]| {
            ops.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(", ")
        };
        if self.opcode == Opcode::Call {
            return if self.defs.is_empty() {
                f.write_str(name)
            } else {
                write!(f, "{name} {}", join(&self.defs))
            };
        }
        if !self.defs.is_empty() {
            write!(f, "{} = ", join(&self.defs))?;
        }
        f.write_str(name)?;
        if !self.uses.is_empty() {
            write!(f, " {}", join(&self.uses))?;
        }
        Ok(())
    }
}
