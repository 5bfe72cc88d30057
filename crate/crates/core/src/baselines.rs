//! Reference allocators: a weight-ordered greedy allocator, an exhaustive
//! oracle for small graphs, and a seeded uniform policy over masks.

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Action;
use crate::igraph::{build_interference_graph, legal_registers, InterferenceGraph, PartialAssignment};
use crate::liveness::{compute_liveness, LivenessInfo};
use crate::machine::{MachineDescription, MachineError};
use crate::mir::{MachineFunction, ProgramPoint};
use crate::transforms::{materialize, split_live_range, splittable_points, Color, ColorMap, Materialized, TransformError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("graph has {got} virtual vertices, the oracle accepts at most {max}")]
    TooLarge { got: usize, max: usize },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error("empty action mask")]
    EmptyMask,
}

/// Largest graph the exhaustive oracle will search.
pub const ORACLE_MAX_VERTICES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyOptions {
    /// Try one live-range split before giving up on a vreg.
    pub split: bool,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        GreedyOptions { split: true }
    }
}

#[derive(Debug, Clone)]
pub struct GreedyResult {
    /// Colors and SPILL marks over the vregs of `materialized.virtual_function`
    /// before spill code, i.e. after splitting.
    pub decisions: ColorMap,
    pub splits: Vec<(String, ProgramPoint)>,
    pub materialized: Materialized,
    /// Estimated throughput of the physical function.
    pub cost: u64,
    /// Summed weight of every spilled vreg, cascades included, measured on
    /// the function before spill code.
    pub spilled_weight: f64,
}

/// Visit order: heaviest first, then earliest access, then name.
fn priority(info: &LivenessInfo, v: &str) -> (std::cmp::Reverse<u64>, ProgramPoint, String) {
    let w = info.weights.get(v).copied().unwrap_or(0.0);
    let first = info.uses.get(v).and_then(|k| k.first().copied()).unwrap_or(0);
    (std::cmp::Reverse(w.to_bits()), first, v.to_string())
}

/// First legal register, preferring ones that survive calls.
fn pick(md: &MachineDescription, chi: &[String]) -> Option<String> {
    chi.iter()
        .find(|r| !md.is_call_clobbered(r))
        .or_else(|| chi.first())
        .cloned()
}

/// The access point followed by the longest gap, ignoring the first access.
fn best_split_point(info: &LivenessInfo, f: &MachineFunction, v: &str) -> Option<ProgramPoint> {
    let ks = &info.uses[v];
    let ds = &info.distances[v];
    let allowed: BTreeSet<ProgramPoint> = splittable_points(f, info, v).into_iter().collect();
    (1..ks.len().saturating_sub(1))
        .filter(|&i| allowed.contains(&ks[i]))
        .max_by(|&a, &b| ds[a].cmp(&ds[b]).then(b.cmp(&a)))
        .map(|i| ks[i])
}

/// Greedy allocation of a whole function.
///
/// Vregs are colored heaviest first with the first legal register. A vreg
/// with no legal register is split once at the access before its longest
/// gap, provided both halves could be colored right away; otherwise it is
/// spilled. The halves are requeued and never split again.
pub fn greedy_allocate(
    f: &MachineFunction,
    md: &MachineDescription,
    options: GreedyOptions,
) -> Result<GreedyResult, BaselineError> {
    let mut func = f.clone();
    let mut info = compute_liveness(&func);
    let mut g = build_interference_graph(&func, &info);
    let mut asg = PartialAssignment::default();
    let mut products: BTreeSet<String> = BTreeSet::new();
    let mut splits = Vec::new();
    let mut queue: Vec<String> = g.vreg_ids().map(str::to_string).collect();

    while !queue.is_empty() {
        queue.sort_by_key(|v| priority(&info, v));
        let v = queue.remove(0);
        let legal = legal_registers(&g, md, &asg, &v).expect("queued vregs are unassigned vertices");
        if let Some(r) = pick(md, &legal.chi) {
            asg.colors.insert(v, r);
            continue;
        }
        if options.split && !products.contains(&v) {
            if let Some(k) = best_split_point(&info, &func, &v) {
                let r = split_live_range(&func, &v, k)?;
                let g2 = build_interference_graph(&r.function, &r.liveness);
                let l1 = legal_registers(&g2, md, &asg, &r.v_prime).expect("fresh half");
                let ok = pick(md, &l1.chi).is_some_and(|c1| {
                    let mut trial = asg.clone();
                    trial.colors.insert(r.v_prime.clone(), c1);
                    legal_registers(&g2, md, &trial, &r.v_double)
                        .map(|l| !l.chi.is_empty())
                        .unwrap_or(false)
                });
                if ok {
                    debug!("greedy: split %{v} at {k}");
                    splits.push((v.clone(), k));
                    products.insert(r.v_prime.clone());
                    products.insert(r.v_double.clone());
                    queue.push(r.v_prime);
                    queue.push(r.v_double);
                    func = r.function;
                    info = r.liveness;
                    g = g2;
                    continue;
                }
            }
        }
        asg.spilled.insert(v);
    }

    let mut decisions: ColorMap = asg
        .colors
        .iter()
        .map(|(v, r)| (v.clone(), Color::Reg(r.clone())))
        .collect();
    for v in &asg.spilled {
        decisions.insert(v.clone(), Color::Spill);
    }
    let materialized = materialize(&func, md, &decisions)?;
    let cost = md.estimate_throughput(&materialized.function)?;
    let spilled_weight = materialized.all_spilled().map(|v| info.weight(v)).fold(0.0, |a, b| a + b);
    Ok(GreedyResult {
        decisions,
        splits,
        materialized,
        cost,
        spilled_weight,
    })
}

/// Greedy coloring of a graph without touching the function: vregs with no
/// legal register are marked SPILL.
pub fn greedy_color_graph(g: &InterferenceGraph, md: &MachineDescription) -> ColorMap {
    let mut order: Vec<&crate::igraph::Vertex> = g.vertices.iter().filter(|v| v.is_virtual()).collect();
    order.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.range.start.cmp(&b.range.start))
            .then(a.id.cmp(&b.id))
    });
    let mut asg = PartialAssignment::default();
    for v in order {
        let legal = legal_registers(g, md, &asg, &v.id).expect("unassigned vreg");
        match pick(md, &legal.chi) {
            Some(r) => {
                asg.colors.insert(v.id.clone(), r);
            }
            None => {
                asg.spilled.insert(v.id.clone());
            }
        }
    }
    to_color_map(&asg)
}

fn to_color_map(asg: &PartialAssignment) -> ColorMap {
    let mut m: ColorMap = asg
        .colors
        .iter()
        .map(|(v, r)| (v.clone(), Color::Reg(r.clone())))
        .collect();
    for v in &asg.spilled {
        m.insert(v.clone(), Color::Spill);
    }
    m
}

/// Summed weight and number of SPILL entries of a map over `g`.
pub fn spill_cost(g: &InterferenceGraph, cmap: &ColorMap) -> (f64, usize) {
    let mut w = 0.0;
    let mut n = 0;
    for (v, c) in cmap {
        if *c == Color::Spill {
            w += g.vertex(v).map_or(0.0, |x| x.weight);
            n += 1;
        }
    }
    (w, n)
}

struct Search<'a> {
    g: &'a InterferenceGraph,
    md: &'a MachineDescription,
    order: Vec<String>,
    weights: Vec<f64>,
    /// Classes whose registers are interchangeable while unused, keyed by
    /// the types their members belong to.
    signature: BTreeMap<usize, Vec<String>>,
    fixed_classes: BTreeSet<usize>,
    best: Option<(f64, usize, PartialAssignment)>,
}

impl Search<'_> {
    fn better(&self, w: f64, n: usize) -> bool {
        match &self.best {
            None => true,
            Some((bw, bn, _)) => w < *bw || (w == *bw && n < *bn),
        }
    }

    fn go(&mut self, i: usize, asg: &mut PartialAssignment, w: f64, n: usize) {
        if !self.better(w, n) {
            return;
        }
        if i == self.order.len() {
            self.best = Some((w, n, asg.clone()));
            return;
        }
        let v = self.order[i].clone();
        let legal = legal_registers(self.g, self.md, asg, &v).expect("unassigned vreg");
        let used: BTreeSet<usize> = asg
            .colors
            .values()
            .filter_map(|r| self.md.class_of(r))
            .chain(self.fixed_classes.iter().copied())
            .collect();
        let mut fresh_tried: BTreeSet<Vec<String>> = BTreeSet::new();
        for r in &legal.chi {
            let class = self.md.class_of(r);
            if let Some(c) = class {
                if !used.contains(&c) {
                    // Untouched classes with the same shape are symmetric.
                    if !fresh_tried.insert(self.signature[&c].clone()) {
                        continue;
                    }
                }
            }
            asg.colors.insert(v.clone(), r.clone());
            self.go(i + 1, asg, w, n);
            asg.colors.remove(&v);
            if matches!(self.best, Some((bw, 0, _)) if bw == 0.0) {
                return;
            }
        }
        asg.spilled.insert(v.clone());
        self.go(i + 1, asg, w + self.weights[i], n + 1);
        asg.spilled.remove(&v);
    }
}

/// Exhaustive search for a map over the virtual vertices of `g` that
/// minimizes spilled weight, then spill count. Registers are restricted to
/// the legal set at each step, so every returned map is legal.
pub fn brute_force_color(g: &InterferenceGraph, md: &MachineDescription) -> Result<ColorMap, BaselineError> {
    let n = g.num_vregs();
    if n > ORACLE_MAX_VERTICES {
        return Err(BaselineError::TooLarge {
            got: n,
            max: ORACLE_MAX_VERTICES,
        });
    }
    let mut order: Vec<&crate::igraph::Vertex> = g.vertices.iter().filter(|v| v.is_virtual()).collect();
    order.sort_by(|a, b| g.degree(&b.id).cmp(&g.degree(&a.id)).then(a.id.cmp(&b.id)));
    let mut members: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for r in &md.registers {
        if let Some(c) = md.class_of(&r.id) {
            members.entry(c).or_default().insert(r.type_id.clone());
        }
    }
    let signature = members
        .into_iter()
        .map(|(c, tys)| (c, tys.into_iter().collect()))
        .collect();
    let fixed_classes = g
        .vertices
        .iter()
        .filter_map(|v| match &v.kind {
            crate::igraph::VertexKind::Physical { reg } => md.class_of(reg),
            _ => None,
        })
        .collect();
    let mut s = Search {
        g,
        md,
        order: order.iter().map(|v| v.id.clone()).collect(),
        weights: order.iter().map(|v| v.weight).collect(),
        signature,
        fixed_classes,
        best: None,
    };
    s.go(0, &mut PartialAssignment::default(), 0.0, 0);
    let (_, _, asg) = s.best.expect("all-spill is always reachable");
    Ok(to_color_map(&asg))
}

/// Uniform choice from a mask; the draw depends only on `(seed, step)`.
pub fn random_policy_step(mask: &[Action], seed: u64, step: u64) -> Result<Action, BaselineError> {
    if mask.is_empty() {
        return Err(BaselineError::EmptyMask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    Ok(mask[rng.gen_range(0..mask.len())].clone())
}
