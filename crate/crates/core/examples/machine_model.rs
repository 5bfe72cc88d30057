//! Loads the shipped machine descriptions and shows types, congruence
//! classes, aliasing, latencies and the throughput estimate.
//!
//! `cargo run --example machine_model [path/to/machine.toml]`

use marl_regalloc::machine::{load_machine_description, MachineDescription};
use marl_regalloc::mir::{parse_function, Opcode};

fn describe(md: &MachineDescription) {
    println!("machine {}", md.name);
    for t in &md.types {
        let regs = md.regs_of_type(&t.id).unwrap_or(&[]);
        println!("  type {:<6} {} registers: {}", t.id, regs.len(), regs.join(" "));
    }
    for c in md.classes.iter().filter(|c| c.len() > 1) {
        println!("  class {}", c.join(" < "));
    }
    println!("  call-clobbered: {}", md.call_clobbers().join(" "));
    for op in [Opcode::Add, Opcode::Mul, Opcode::Div, Opcode::Load] {
        println!("  latency {:<5} {}", op.mnemonic(), md.latency(op));
    }
}

fn main() -> anyhow::Result<()> {
    if let Some(path) = std::env::args().nth(1) {
        describe(&load_machine_description(&std::fs::read_to_string(path)?)?);
        return Ok(());
    }
    for name in MachineDescription::builtin_names() {
        describe(&MachineDescription::builtin(name)?);
    }
    let x86 = MachineDescription::x86like();
    if let (Some(a), Some(b)) = (x86.registers.first(), x86.classes.iter().find(|c| c.len() > 1)) {
        println!("{} aliases {}: {}", a.id, b[b.len() - 1], x86.aliases(&a.id, &b[b.len() - 1])?);
    }
    let f = parse_function(include_str!("../data/running_example_x86.mir"))?;
    x86.check_function(&f)?;
    println!("throughput estimate of {}: {}", f.name, x86.estimate_throughput(&f)?);
    Ok(())
}
