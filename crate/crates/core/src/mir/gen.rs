//! Seeded generator of structured (hence reducible) functions.
//!
//! Every generated function validates and runs to completion on any input
//! vector: divisors are non-zero immediates or vregs that only ever hold a
//! non-zero constant, loops count down from a small trip count, and reads
//! of stack slots follow the matching store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BasicBlock, Instruction, MachineFunction, Opcode, Operand, VReg};
use crate::machine::{MachineDescription, RegKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    /// Upper bound on basic blocks.
    pub blocks: usize,
    /// Budget of non-control instructions.
    pub instrs: usize,
    /// Data vregs (loop counters come on top).
    pub vregs: usize,
    pub loop_prob: f64,
    pub branch_prob: f64,
    /// Vreg types drawn uniformly per vreg.
    pub types: Vec<String>,
    /// How many of the data vregs are function parameters.
    pub params: usize,
    pub max_loop_depth: u32,
    pub max_trip: i64,
    /// Register mandated as the result of `div`, if the target has one.
    pub div_result: Option<String>,
    /// Registers listed on every `call`; no calls are generated when empty.
    pub call_clobbers: Vec<String>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            blocks: 8,
            instrs: 20,
            vregs: 6,
            loop_prob: 0.12,
            branch_prob: 0.12,
            types: vec!["gr32".to_string()],
            params: 1,
            max_loop_depth: 2,
            max_trip: 3,
            div_result: None,
            call_clobbers: Vec::new(),
        }
    }
}

impl GenParams {
    /// Defaults adapted to a target: its general-purpose types, its fixed
    /// `div` result register and its call clobbers.
    pub fn for_machine(md: &MachineDescription) -> Self {
        let types: Vec<String> = md
            .types
            .iter()
            .filter(|t| t.kind == RegKind::Gpr && t.width >= 32)
            .map(|t| t.id.clone())
            .collect();
        let div_result = md.opcodes[&Opcode::Div]
            .fixed
            .iter()
            .find(|f| f.operand == 0)
            .map(|f| f.register.clone());
        GenParams {
            types: if types.is_empty() {
                vec![md.types[0].id.clone()]
            } else {
                types
            },
            div_result,
            call_clobbers: md.call_clobbers().to_vec(),
            ..GenParams::default()
        }
    }

    fn clamped(&self) -> GenParams {
        let mut p = self.clone();
        p.blocks = p.blocks.clamp(1, 256);
        p.instrs = p.instrs.clamp(1, 4096);
        p.vregs = p.vregs.min(512);
        p.params = p.params.min(p.vregs);
        p.loop_prob = p.loop_prob.clamp(0.0, 1.0);
        p.branch_prob = p.branch_prob.clamp(0.0, 1.0 - p.loop_prob);
        p.max_loop_depth = p.max_loop_depth.min(3);
        p.max_trip = p.max_trip.clamp(1, 8);
        if p.types.is_empty() {
            p.types.push("gr32".to_string());
        }
        p
    }
}

struct Gen {
    rng: ChaCha8Rng,
    p: GenParams,
    blocks: Vec<BasicBlock>,
    cur_label: String,
    cur: Vec<Instruction>,
    labels: usize,
    blocks_left: usize,
    instrs_left: usize,
    vars: Vec<VReg>,
    defined: Vec<bool>,
    ever_defined: Vec<bool>,
    constant: Vec<bool>,
    counters: usize,
    slots: u32,
    loop_depth: u32,
}

fn mk(op: Opcode, defs: Vec<Operand>, uses: Vec<Operand>) -> Instruction {
    Instruction::new(op, defs, uses)
}

impl Gen {
    fn label(&mut self) -> String {
        let l = format!("bb{}", self.labels);
        self.labels += 1;
        l
    }

    fn open(&mut self, label: String) {
        let insts = std::mem::take(&mut self.cur);
        let old = std::mem::replace(&mut self.cur_label, label);
        self.blocks.push(BasicBlock::new(old, insts));
    }

    fn emit(&mut self, inst: Instruction) {
        self.cur.push(inst);
    }

    fn var(&self, i: usize) -> Operand {
        Operand::Virtual(self.vars[i].clone())
    }

    fn imm(&mut self) -> Operand {
        Operand::Imm(self.rng.gen_range(-20..=20))
    }

    fn value(&mut self) -> Operand {
        let live: Vec<usize> = (0..self.vars.len()).filter(|&i| self.defined[i]).collect();
        if !live.is_empty() && self.rng.gen_bool(0.8) {
            let i = live[self.rng.gen_range(0..live.len())];
            self.var(i)
        } else {
            self.imm()
        }
    }

    fn divisor(&mut self) -> Operand {
        let consts: Vec<usize> = (0..self.vars.len())
            .filter(|&i| self.defined[i] && self.constant[i])
            .collect();
        if !consts.is_empty() && self.rng.gen_bool(0.6) {
            let i = consts[self.rng.gen_range(0..consts.len())];
            self.var(i)
        } else {
            let mut d = self.rng.gen_range(1..=9);
            if self.rng.gen_bool(0.3) {
                d = -d;
            }
            Operand::Imm(d)
        }
    }

    /// A vreg that may be (re)defined by an arbitrary value.
    fn target(&mut self) -> Option<usize> {
        let fresh: Vec<usize> = (0..self.vars.len())
            .filter(|&i| !self.ever_defined[i])
            .collect();
        if !fresh.is_empty() && self.rng.gen_bool(0.6) {
            return Some(fresh[self.rng.gen_range(0..fresh.len())]);
        }
        let pool: Vec<usize> = (0..self.vars.len())
            .filter(|&i| !self.constant[i] || !self.ever_defined[i])
            .collect();
        if pool.is_empty() {
            None
        } else {
            Some(pool[self.rng.gen_range(0..pool.len())])
        }
    }

    fn define(&mut self, i: usize, constant: bool) {
        if !self.ever_defined[i] {
            self.constant[i] = constant;
        }
        self.ever_defined[i] = true;
        self.defined[i] = true;
    }

    fn straight(&mut self) {
        self.instrs_left = self.instrs_left.saturating_sub(1);
        if self.vars.is_empty() {
            let v = self.imm();
            self.emit(mk(Opcode::Print, vec![], vec![v]));
            return;
        }
        let roll: f64 = self.rng.gen();
        let Some(t) = self.target() else {
            let v = self.value();
            self.emit(mk(Opcode::Print, vec![], vec![v]));
            return;
        };
        if roll < 0.2 {
            // A fresh vreg defined from a non-zero constant may become a divisor.
            let c = loop {
                let c = self.rng.gen_range(-20..=20);
                if c != 0 {
                    break c;
                }
            };
            let constant = !self.ever_defined[t];
            let def = self.var(t);
            self.emit(mk(Opcode::Mov, vec![def], vec![Operand::Imm(c)]));
            self.define(t, constant);
        } else if roll < 0.55 {
            let op = [Opcode::Add, Opcode::Sub, Opcode::Mul, Opcode::Cmp][self.rng.gen_range(0..4)];
            let a = self.value();
            let b = self.value();
            let def = self.var(t);
            self.emit(mk(op, vec![def], vec![a, b]));
            self.define(t, false);
        } else if roll < 0.65 {
            let a = self.value();
            let d = self.divisor();
            let def = self.var(t);
            match self.p.div_result.clone() {
                Some(r) => {
                    let r = Operand::Physical(r);
                    self.emit(mk(Opcode::Div, vec![r.clone()], vec![a, d]));
                    self.emit(mk(Opcode::Mov, vec![def], vec![r]));
                }
                None => self.emit(mk(Opcode::Div, vec![def], vec![a, d])),
            }
            self.define(t, false);
        } else if roll < 0.72 {
            let a = self.value();
            let s = Operand::Slot(self.slots);
            self.slots += 1;
            self.emit(mk(Opcode::Store, vec![], vec![a, s.clone()]));
            let def = self.var(t);
            self.emit(mk(Opcode::Load, vec![def], vec![s]));
            self.define(t, false);
        } else if roll < 0.77 && !self.p.call_clobbers.is_empty() {
            let defs = self
                .p
                .call_clobbers
                .iter()
                .map(|r| Operand::Physical(r.clone()))
                .collect();
            self.emit(mk(Opcode::Call, defs, vec![]));
        } else if roll < 0.9 {
            let v = self.value();
            self.emit(mk(Opcode::Print, vec![], vec![v]));
        } else {
            let a = self.value();
            let def = self.var(t);
            self.emit(mk(Opcode::Mov, vec![def], vec![a]));
            self.define(t, false);
        }
    }

    fn region(&mut self, stmts: usize) {
        for _ in 0..stmts {
            if self.instrs_left == 0 {
                break;
            }
            self.statement();
        }
    }

    fn statement(&mut self) {
        let can_control = !self.vars.is_empty();
        let roll: f64 = self.rng.gen();
        if can_control
            && roll < self.p.loop_prob
            && self.blocks_left >= 3
            && self.loop_depth < self.p.max_loop_depth
        {
            self.gen_loop();
        } else if can_control
            && roll < self.p.loop_prob + self.p.branch_prob
            && self.blocks_left >= 2
        {
            self.gen_if();
        } else {
            self.straight();
        }
    }

    fn gen_loop(&mut self) {
        self.blocks_left -= 3;
        let counter = VReg::new(format!("n{}", self.counters), self.p.types[0].clone());
        self.counters += 1;
        let n = Operand::Virtual(counter);
        let trip = self.rng.gen_range(1..=self.p.max_trip);
        self.emit(mk(Opcode::Mov, vec![n.clone()], vec![Operand::Imm(trip)]));
        let (header, body, exit) = (self.label(), self.label(), self.label());
        self.open(header.clone());
        self.emit(mk(
            Opcode::Br,
            vec![],
            vec![n.clone(), Operand::Label(body.clone()), Operand::Label(exit.clone())],
        ));
        self.open(body);
        let saved = self.defined.clone();
        self.loop_depth += 1;
        let len = self.rng.gen_range(1..=4);
        self.region(len);
        self.loop_depth -= 1;
        self.defined = saved;
        self.emit(mk(Opcode::Sub, vec![n.clone()], vec![n, Operand::Imm(1)]));
        self.emit(mk(Opcode::Jmp, vec![], vec![Operand::Label(header)]));
        self.open(exit);
    }

    fn gen_if(&mut self) {
        self.blocks_left -= 2;
        let cond = match self.target() {
            Some(t) => {
                let a = self.value();
                let b = self.value();
                let def = self.var(t);
                self.emit(mk(Opcode::Cmp, vec![def.clone()], vec![a, b]));
                self.define(t, false);
                def
            }
            None => Operand::Imm(1),
        };
        let (then, join) = (self.label(), self.label());
        self.emit(mk(
            Opcode::Br,
            vec![],
            vec![cond, Operand::Label(then.clone()), Operand::Label(join.clone())],
        ));
        self.open(then);
        let saved = self.defined.clone();
        let len = self.rng.gen_range(1..=3);
        self.region(len);
        self.defined = saved;
        self.open(join);
    }
}

/// Generates a validated function from `seed`. Out-of-range parameters are
/// clamped rather than rejected.
pub fn generate_random_function(seed: u64, params: &GenParams) -> MachineFunction {
    let p = params.clamped();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars: Vec<VReg> = (0..p.vregs)
        .map(|i| VReg::new(format!("v{i}"), p.types[rng.gen_range(0..p.types.len())].clone()))
        .collect();
    let n = vars.len();
    let mut g = Gen {
        rng,
        blocks: Vec::new(),
        cur_label: String::new(),
        cur: Vec::new(),
        labels: 0,
        blocks_left: p.blocks - 1,
        instrs_left: p.instrs,
        vars,
        defined: vec![false; n],
        ever_defined: vec![false; n],
        constant: vec![false; n],
        counters: 0,
        slots: 0,
        loop_depth: 0,
        p,
    };
    g.cur_label = g.label();
    for i in 0..g.p.params {
        g.define(i, false);
    }
    let params_ops: Vec<Operand> = (0..g.p.params).map(|i| g.var(i)).collect();
    while g.instrs_left > 0 {
        g.statement();
    }
    let live: Vec<usize> = (0..n).filter(|&i| g.defined[i]).collect();
    for &i in live.iter().rev().take(2) {
        let v = g.var(i);
        g.emit(mk(Opcode::Print, vec![], vec![v]));
    }
    let ret = live.first().map(|&i| g.var(i)).into_iter().collect();
    g.emit(mk(Opcode::Ret, vec![], ret));
    g.open(String::new());
    let blocks: Vec<BasicBlock> = g.blocks;
    MachineFunction::new(format!("gen{seed}"), params_ops, blocks)
        .expect("generator emits valid functions")
}
