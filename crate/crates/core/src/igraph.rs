//! Interference graph and the legality sets χ_T, χ_C, χ_I and χ.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liveness::{LiveRange, LivenessInfo};
use crate::machine::MachineDescription;
use crate::mir::MachineFunction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("`{0}` is not a vertex of the interference graph")]
    UnknownVertex(String),
    #[error("`{0}` is a pre-assigned physical register")]
    Physical(String),
    #[error("%{0} is already colored or spilled")]
    AlreadyAssigned(String),
    #[error("unknown register type `{0}`")]
    UnknownType(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VertexKind {
    Virtual { ty: String },
    Physical { reg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    NotVisited,
    Spill,
    Colored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    #[serde(flatten)]
    pub kind: VertexKind,
    pub range: LiveRange,
    pub weight: f64,
}

impl Vertex {
    pub fn is_virtual(&self) -> bool {
        matches!(self.kind, VertexKind::Virtual { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceGraph {
    pub vertices: Vec<Vertex>,
    /// Sorted adjacency lists of vertex indices.
    pub adj: Vec<Vec<usize>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Registers held and vregs spilled so far in an allocation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialAssignment {
    pub colors: BTreeMap<String, String>,
    pub spilled: BTreeSet<String>,
}

impl PartialAssignment {
    pub fn annotation(&self, v: &str) -> Annotation {
        if self.colors.contains_key(v) {
            Annotation::Colored
        } else if self.spilled.contains(v) {
            Annotation::Spill
        } else {
            Annotation::NotVisited
        }
    }

    pub fn is_assigned(&self, v: &str) -> bool {
        self.colors.contains_key(v) || self.spilled.contains(v)
    }
}

/// The three constraint sets and their intersection, each in the order of
/// the register type's declaration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Legality {
    pub chi_t: Vec<String>,
    pub chi_c: Vec<String>,
    pub chi_i: Vec<String>,
    pub chi: Vec<String>,
}

pub fn build_interference_graph(_f: &MachineFunction, info: &LivenessInfo) -> InterferenceGraph {
    let mut vertices: Vec<Vertex> = info
        .ranges
        .iter()
        .map(|(v, r)| Vertex {
            id: v.clone(),
            kind: VertexKind::Virtual {
                ty: info.types[v].clone(),
            },
            range: *r,
            weight: info.weights[v],
        })
        .collect();
    vertices.extend(info.phys.iter().map(|s| Vertex {
        id: s.id(),
        kind: VertexKind::Physical { reg: s.reg.clone() },
        range: s.range,
        weight: 0.0,
    }));
    vertices.sort_by(|a, b| {
        (a.range.start, !a.is_virtual(), &a.id).cmp(&(b.range.start, !b.is_virtual(), &b.id))
    });
    let n = vertices.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&vertices[i], &vertices[j]);
            if !a.is_virtual() && !b.is_virtual() {
                continue;
            }
            if a.range.overlaps(&b.range) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    let index = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id.clone(), i))
        .collect();
    InterferenceGraph {
        vertices,
        adj,
        index,
    }
}

impl InterferenceGraph {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vertex(&self, id: &str) -> Option<&Vertex> {
        self.index_of(id).map(|i| &self.vertices[i])
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vreg_ids(&self) -> impl Iterator<Item = &str> {
        self.vertices
            .iter()
            .filter(|v| v.is_virtual())
            .map(|v| v.id.as_str())
    }

    pub fn num_vregs(&self) -> usize {
        self.vreg_ids().count()
    }

    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = &Vertex> {
        let i = self.index_of(id);
        i.into_iter()
            .flat_map(move |i| self.adj[i].iter().map(move |&j| &self.vertices[j]))
    }

    pub fn degree(&self, id: &str) -> usize {
        self.index_of(id).map(|i| self.adj[i].len()).unwrap_or(0)
    }

    pub fn interferes(&self, a: &str, b: &str) -> bool {
        match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) => self.adj[i].binary_search(&j).is_ok(),
            _ => false,
        }
    }

    /// Undirected edges as id pairs, each listed once with the lower index first.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (i, ns) in self.adj.iter().enumerate() {
            for &j in ns {
                if i < j {
                    out.push((self.vertices[i].id.clone(), self.vertices[j].id.clone()));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Rebuilds the id index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.clone(), i))
            .collect();
    }

    /// Plain-text listing used by `--dump-graph`.
    pub fn dump(&self, asg: Option<&PartialAssignment>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vertices {} edges {}", self.len(), self.num_edges());
        for v in &self.vertices {
            let what = match &v.kind {
                VertexKind::Virtual { ty } => format!("vreg {ty}"),
                VertexKind::Physical { reg } => format!("phys {reg}"),
            };
            let ann = asg
                .filter(|_| v.is_virtual())
                .map(|a| format!(" {:?}", a.annotation(&v.id)))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "v {} {} [{},{}] M={}{}",
                v.id, what, v.range.start, v.range.end, v.weight, ann
            );
        }
        for (a, b) in self.edges() {
            let _ = writeln!(out, "e {a} {b}");
        }
        out
    }

    /// Register held by a neighbor: its color, or itself if pre-assigned.
    fn held_by<'a>(&'a self, u: &'a Vertex, asg: &'a PartialAssignment) -> Option<&'a str> {
        match &u.kind {
            VertexKind::Physical { reg } => Some(reg),
            VertexKind::Virtual { .. } => asg.colors.get(&u.id).map(String::as_str),
        }
    }

    /// Registers held by the neighbors of `id`, deduplicated.
    pub fn neighbor_registers(&self, id: &str, asg: &PartialAssignment) -> BTreeSet<String> {
        self.neighbors(id)
            .filter_map(|u| self.held_by(u, asg))
            .map(str::to_string)
            .collect()
    }
}

pub fn legal_registers(
    g: &InterferenceGraph,
    md: &MachineDescription,
    asg: &PartialAssignment,
    v: &str,
) -> Result<Legality, GraphError> {
    let vert = g
        .vertex(v)
        .ok_or_else(|| GraphError::UnknownVertex(v.to_string()))?;
    let VertexKind::Virtual { ty } = &vert.kind else {
        return Err(GraphError::Physical(v.to_string()));
    };
    if asg.is_assigned(v) {
        return Err(GraphError::AlreadyAssigned(v.to_string()));
    }
    let chi_t: Vec<String> = md
        .regs_of_type(ty)
        .map_err(|_| GraphError::UnknownType(ty.clone()))?
        .to_vec();
    let held = g.neighbor_registers(v, asg);
    let chi_i: Vec<String> = chi_t.iter().filter(|r| !held.contains(*r)).cloned().collect();
    let held_classes: BTreeSet<Option<usize>> = held.iter().map(|r| md.class_of(r)).collect();
    let chi_c: Vec<String> = chi_t
        .iter()
        .filter(|r| !held_classes.contains(&md.class_of(r)))
        .cloned()
        .collect();
    let chi = chi_t
        .iter()
        .filter(|r| chi_c.contains(r) && chi_i.contains(r))
        .cloned()
        .collect();
    Ok(Legality {
        chi_t,
        chi_c,
        chi_i,
        chi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liveness::compute_liveness;
    use crate::mir::parse_function;

    fn graph(src: &str) -> InterferenceGraph {
        let f = parse_function(src).unwrap();
        build_interference_graph(&f, &compute_liveness(&f))
    }

    #[test]
    fn running_example_is_a_four_clique() {
        let g = graph(include_str!("../data/running_example.mir"));
        let ids: Vec<&str> = g.vreg_ids().collect();
        assert_eq!(ids, vec!["i", "x", "y", "z"]);
        for a in &ids {
            for b in &ids {
                assert_eq!(g.interferes(a, b), a != b, "{a} {b}");
            }
        }
        assert_eq!(g.num_edges(), 6);
    }

    #[test]
    fn physreg_vertex_interferes_with_live_vregs() {
        let g = graph(include_str!("../data/running_example_x86.mir"));
        assert_eq!(g.len(), 5);
        assert!(g.interferes("$eax@5", "i"));
        assert!(g.interferes("$eax@5", "z"));
        assert!(g.interferes("$eax@5", "x"));
    }

    #[test]
    fn disjoint_vregs_do_not_interfere() {
        let g = graph("func f {\nbb0:\n  %a:gr32 = mov 1\n  print %a\n  %b:gr32 = mov 2\n  print %b\n}");
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn fresh_state_allows_the_whole_type() {
        let md = MachineDescription::x86like();
        let g = graph(include_str!("../data/running_example.mir"));
        let l = legal_registers(&g, &md, &PartialAssignment::default(), "i").unwrap();
        assert_eq!(l.chi, md.regs_of_type("gr32").unwrap());
    }

    #[test]
    fn congruence_excludes_aliases_of_neighbor_registers() {
        let md = MachineDescription::x86like();
        let g = graph(
            "func f {\nbb0:\n  %a:gr64 = mov 1\n  %b:gr32 = mov 2\n  print %a\n  print %b\n}",
        );
        let mut asg = PartialAssignment::default();
        asg.colors.insert("a".into(), "rax".into());
        let l = legal_registers(&g, &md, &asg, "b").unwrap();
        assert!(l.chi_t.contains(&"eax".to_string()));
        assert!(l.chi_i.contains(&"eax".to_string()));
        assert!(!l.chi_c.contains(&"eax".to_string()));
        assert!(!l.chi.contains(&"eax".to_string()));
        assert_eq!(l.chi, vec!["ebx", "ecx", "edx"]);
    }

    #[test]
    fn full_neighborhood_empties_chi() {
        let md = MachineDescription::tiny3();
        let g = graph(include_str!("../data/running_example.mir"));
        let mut asg = PartialAssignment::default();
        for (v, r) in [("x", "r0"), ("y", "r1"), ("z", "r2")] {
            asg.colors.insert(v.into(), r.into());
        }
        assert!(legal_registers(&g, &md, &asg, "i").unwrap().chi.is_empty());
        assert!(matches!(
            legal_registers(&g, &md, &asg, "x"),
            Err(GraphError::AlreadyAssigned(_))
        ));
        assert!(matches!(
            legal_registers(&g, &md, &asg, "w"),
            Err(GraphError::UnknownVertex(_))
        ));
    }
}
