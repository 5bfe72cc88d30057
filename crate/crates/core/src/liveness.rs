//! Live ranges, access points, spill weights and register pressure.
//!
//! A vreg's live range is the closed hull of every point where it is
//! defined, read, or live after the instruction. Parameters count as
//! defined at point 1. Physical registers get one range per maximal run of
//! consecutive occupied points, tracked by register name.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mir::{MachineFunction, Operand, ProgramPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LiveRange {
    pub start: ProgramPoint,
    pub end: ProgramPoint,
}

impl LiveRange {
    pub fn new(start: ProgramPoint, end: ProgramPoint) -> Self {
        debug_assert!(start <= end);
        LiveRange { start, end }
    }

    pub fn contains(&self, p: ProgramPoint) -> bool {
        self.start <= p && p <= self.end
    }

    /// Closed-interval overlap: a def at `p` conflicts with anything else
    /// occupying `p`, including operands read by the same instruction.
    pub fn overlaps(&self, other: &LiveRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn points(&self) -> impl Iterator<Item = ProgramPoint> {
        self.start..=self.end
    }

    pub fn len(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysSegment {
    pub reg: String,
    pub range: LiveRange,
}

impl PhysSegment {
    /// Vertex identifier, e.g. `$eax@5`.
    pub fn id(&self) -> String {
        format!("${}@{}", self.reg, self.range.start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LivenessInfo {
    pub ranges: BTreeMap<String, LiveRange>,
    /// K(v): sorted access points, defs included.
    pub uses: BTreeMap<String, Vec<ProgramPoint>>,
    /// D(v): gaps between successive entries of K(v).
    pub distances: BTreeMap<String, Vec<u32>>,
    /// M(v) = sum over K(v) of 10^loop_depth.
    pub weights: BTreeMap<String, f64>,
    pub types: BTreeMap<String, String>,
    pub phys: Vec<PhysSegment>,
    pub pressure: u32,
    /// Loop depth of each point, indexed by `point - 1`.
    pub depths: Vec<u32>,
}

impl LivenessInfo {
    pub fn weight(&self, v: &str) -> f64 {
        self.weights.get(v).copied().unwrap_or(0.0)
    }

    pub fn depth_at(&self, p: ProgramPoint) -> u32 {
        self.depths.get(p as usize - 1).copied().unwrap_or(0)
    }

    /// Weight contributed by a single access at `p`.
    pub fn access_weight(&self, p: ProgramPoint) -> f64 {
        10f64.powi(self.depth_at(p) as i32)
    }

    pub fn live_at(&self, p: ProgramPoint) -> Vec<&str> {
        self.ranges
            .iter()
            .filter(|(_, r)| r.contains(p))
            .map(|(v, _)| v.as_str())
            .collect()
    }

    /// Human-readable report used by `--dump-liveness`.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "pressure {}", self.pressure);
        for (v, r) in &self.ranges {
            let ks: Vec<String> = self.uses[v].iter().map(u32::to_string).collect();
            let ds: Vec<String> = self.distances[v].iter().map(u32::to_string).collect();
            let _ = writeln!(
                out,
                "%{v}:{} range=[{},{}] K={{{}}} D=({}) M={}",
                self.types[v],
                r.start,
                r.end,
                ks.join(","),
                ds.join(","),
                self.weights[v]
            );
        }
        for s in &self.phys {
            let _ = writeln!(out, "${} range=[{},{}]", s.reg, s.range.start, s.range.end);
        }
        out
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Key {
    V(String),
    P(String),
}

fn key(op: &Operand) -> Option<Key> {
    match op {
        Operand::Virtual(v) => Some(Key::V(v.name.clone())),
        Operand::Physical(r) => Some(Key::P(r.clone())),
        _ => None,
    }
}

pub fn compute_liveness(f: &MachineFunction) -> LivenessInfo {
    let mut keys: BTreeSet<Key> = BTreeSet::new();
    for op in f.params.iter().chain(f.instructions().flat_map(|i| i.operands())) {
        if let Some(k) = key(op) {
            keys.insert(k);
        }
    }
    let keys: Vec<Key> = keys.into_iter().collect();
    let index: HashMap<&Key, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let n = keys.len();
    let nb = f.blocks.len();
    let cfg = f.cfg();

    let mut gen = vec![vec![false; n]; nb];
    let mut kill = vec![vec![false; n]; nb];
    for (b, block) in f.blocks.iter().enumerate() {
        for inst in &block.insts {
            for u in &inst.uses {
                if let Some(k) = key(u) {
                    let i = index[&k];
                    if !kill[b][i] {
                        gen[b][i] = true;
                    }
                }
            }
            for d in &inst.defs {
                if let Some(k) = key(d) {
                    kill[b][index[&k]] = true;
                }
            }
        }
    }
    let mut live_in = vec![vec![false; n]; nb];
    let mut live_out = vec![vec![false; n]; nb];
    let order = cfg.postorder();
    let mut all: Vec<usize> = order.clone();
    all.extend((0..nb).filter(|b| !cfg.reachable[*b]));
    let mut changed = true;
    while changed {
        changed = false;
        for &b in &all {
            let mut out = vec![false; n];
            for &s in &cfg.succs[b] {
                for i in 0..n {
                    out[i] |= live_in[s][i];
                }
            }
            let inn: Vec<bool> = (0..n).map(|i| gen[b][i] || (out[i] && !kill[b][i])).collect();
            if inn != live_in[b] || out != live_out[b] {
                live_in[b] = inn;
                live_out[b] = out;
                changed = true;
            }
        }
    }

    let np = f.num_points();
    let mut occupied: Vec<BTreeSet<ProgramPoint>> = vec![BTreeSet::new(); n];
    let mut accesses: Vec<BTreeSet<ProgramPoint>> = vec![BTreeSet::new(); n];
    for (b, block) in f.blocks.iter().enumerate() {
        let mut live = live_out[b].clone();
        for inst in block.insts.iter().rev() {
            let p = inst.point;
            for (i, &l) in live.iter().enumerate() {
                if l {
                    occupied[i].insert(p);
                }
            }
            for d in &inst.defs {
                if let Some(k) = key(d) {
                    let i = index[&k];
                    occupied[i].insert(p);
                    accesses[i].insert(p);
                    live[i] = false;
                }
            }
            for u in &inst.uses {
                if let Some(k) = key(u) {
                    let i = index[&k];
                    occupied[i].insert(p);
                    accesses[i].insert(p);
                    live[i] = true;
                }
            }
        }
    }
    if np > 0 {
        for p in &f.params {
            if let Some(k) = key(p) {
                let i = index[&k];
                occupied[i].insert(1);
                accesses[i].insert(1);
            }
        }
    }

    let depths: Vec<u32> = f.instructions().map(|i| i.loop_depth).collect();
    let weight_of = |p: ProgramPoint| 10f64.powi(depths.get(p as usize - 1).copied().unwrap_or(0) as i32);
    let vreg_types = f.vregs();
    let mut info = LivenessInfo {
        ranges: BTreeMap::new(),
        uses: BTreeMap::new(),
        distances: BTreeMap::new(),
        weights: BTreeMap::new(),
        types: BTreeMap::new(),
        phys: Vec::new(),
        pressure: 0,
        depths: depths.clone(),
    };
    for (i, k) in keys.iter().enumerate() {
        match k {
            Key::V(name) => {
                // A parameter of an empty function still gets a unit range.
                let (start, end) = match (occupied[i].first(), occupied[i].last()) {
                    (Some(&s), Some(&e)) => (s, e),
                    _ => (1, 1),
                };
                let ks: Vec<ProgramPoint> = if accesses[i].is_empty() {
                    vec![start]
                } else {
                    accesses[i].iter().copied().collect()
                };
                let ds = ks.windows(2).map(|w| w[1] - w[0]).collect();
                let m = ks.iter().map(|&p| weight_of(p)).fold(0.0, |a, b| a + b);
                info.ranges.insert(name.clone(), LiveRange::new(start, end));
                info.uses.insert(name.clone(), ks);
                info.distances.insert(name.clone(), ds);
                info.weights.insert(name.clone(), m);
                info.types.insert(name.clone(), vreg_types[name].clone());
            }
            Key::P(reg) => {
                let mut run: Option<LiveRange> = None;
                for &p in &occupied[i] {
                    run = match run {
                        Some(r) if r.end + 1 == p => Some(LiveRange::new(r.start, p)),
                        Some(r) => {
                            info.phys.push(PhysSegment {
                                reg: reg.clone(),
                                range: r,
                            });
                            Some(LiveRange::new(p, p))
                        }
                        None => Some(LiveRange::new(p, p)),
                    };
                }
                if let Some(r) = run {
                    info.phys.push(PhysSegment {
                        reg: reg.clone(),
                        range: r,
                    });
                }
            }
        }
    }
    info.phys.sort_by(|a, b| (a.range.start, &a.reg).cmp(&(b.range.start, &b.reg)));
    info.pressure = pressure_of(&info, np);
    info
}

fn pressure_of(info: &LivenessInfo, np: u32) -> u32 {
    let mut delta = vec![0i64; np as usize + 3];
    for r in info.ranges.values() {
        delta[r.start as usize] += 1;
        delta[r.end as usize + 1] -= 1;
    }
    let mut cur = 0i64;
    let mut best = 0i64;
    for d in delta {
        cur += d;
        best = best.max(cur);
    }
    best as u32
}

/// Maximum number of vreg live ranges covering a single program point.
pub fn register_pressure(f: &MachineFunction, info: &LivenessInfo) -> u32 {
    pressure_of(info, f.num_points())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::parse_function;

    fn running() -> MachineFunction {
        parse_function(include_str!("../data/running_example.mir")).unwrap()
    }

    #[test]
    fn running_example_access_points() {
        let info = compute_liveness(&running());
        assert_eq!(info.uses["i"], vec![1, 6, 8, 11]);
        assert_eq!(info.distances["i"], vec![5, 2, 3]);
        assert_eq!(info.weights["i"], 4.0);
        assert_eq!(info.ranges["i"], LiveRange::new(1, 11));
        assert_eq!(info.ranges["x"], LiveRange::new(2, 5));
        assert_eq!(info.ranges["y"], LiveRange::new(3, 9));
        assert_eq!(info.ranges["z"], LiveRange::new(5, 10));
        assert_eq!(info.pressure, 4);
    }

    #[test]
    fn dead_vreg_has_unit_range() {
        let f = parse_function("func f {\nbb0:\n  %a:gr32 = mov 1\n  print 2\n}").unwrap();
        let info = compute_liveness(&f);
        assert_eq!(info.ranges["a"], LiveRange::new(1, 1));
        assert_eq!(info.weights["a"], 1.0);
        assert_eq!(info.pressure, 1);
    }

    #[test]
    fn disjoint_ranges_have_pressure_one() {
        let f = parse_function(
            "func f {\nbb0:\n  %a:gr32 = mov 1\n  print %a\n  %b:gr32 = mov 2\n  print %b\n}",
        )
        .unwrap();
        assert_eq!(compute_liveness(&f).pressure, 1);
    }

    #[test]
    fn loop_accesses_weigh_by_depth() {
        let f = parse_function(
            "func f {\nbb0:\n  %n:gr32 = mov 2\nbb1:\n  br %n, bb2, bb5\nbb2:\n  %m:gr32 = mov 2\nbb3:\n  br %m, bb4, bb1b\nbb4:\n  %a:gr32 = mov 1\n  print %a\n  %m = sub %m, 1\n  jmp bb3\nbb1b:\n  %n = sub %n, 1\n  jmp bb1\nbb5:\n  ret\n}",
        )
        .unwrap();
        let info = compute_liveness(&f);
        assert_eq!(info.weights["a"], 200.0);
        // The outer counter stays live across the whole inner loop.
        let n = info.ranges["n"];
        assert!(n.contains(info.uses["a"][0]));
    }

    #[test]
    fn params_are_defined_at_entry() {
        let f = parse_function("func f(%p:gr32) {\nbb0:\n  print 1\n  print %p\n}").unwrap();
        let info = compute_liveness(&f);
        assert_eq!(info.uses["p"], vec![1, 2]);
        assert_eq!(info.ranges["p"], LiveRange::new(1, 2));
    }

    #[test]
    fn physical_segments_are_contiguous_runs() {
        let f = parse_function(include_str!("../data/running_example_x86.mir")).unwrap();
        let info = compute_liveness(&f);
        assert_eq!(info.phys.len(), 1);
        assert_eq!(info.phys[0].reg, "eax");
        assert_eq!(info.phys[0].range, LiveRange::new(5, 6));
        assert_eq!(info.phys[0].id(), "$eax@5");
    }
}
