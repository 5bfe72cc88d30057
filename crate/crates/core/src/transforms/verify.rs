use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Color, ColorMap};
use crate::igraph::PartialAssignment;
use crate::liveness::LivenessInfo;
use crate::machine::MachineDescription;
use crate::mir::MachineFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Type,
    Congruence,
    Interference,
    /// A vreg with no entry in the color map.
    Unmapped,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub vregs: Vec<String>,
    pub registers: Vec<String>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ViolationKind::Type => "type",
            ViolationKind::Congruence => "congruence",
            ViolationKind::Interference => "interference",
            ViolationKind::Unmapped => "unmapped",
        };
        write!(f, "{kind}: {} -> {}", self.vregs.join(", "), self.registers.join(", "))
    }
}

fn check<'a>(
    info: &LivenessInfo,
    md: &MachineDescription,
    reg_of: impl Fn(&str) -> Option<&'a str>,
    out: &mut Vec<Violation>,
) {
    let assigned: Vec<(&String, &str)> = info
        .ranges
        .keys()
        .filter_map(|v| reg_of(v).map(|r| (v, r)))
        .collect();
    for &(v, r) in &assigned {
        let ty = &info.types[v];
        let ok = md.regs_of_type(ty).map(|rs| rs.iter().any(|x| x == r)).unwrap_or(false);
        if !ok {
            out.push(Violation {
                kind: ViolationKind::Type,
                vregs: vec![v.clone()],
                registers: vec![r.to_string()],
            });
        }
    }
    let clash = |a: &str, b: &str| -> Option<ViolationKind> {
        if a == b {
            Some(ViolationKind::Interference)
        } else if md.aliases(a, b).unwrap_or(false) {
            Some(ViolationKind::Congruence)
        } else {
            None
        }
    };
    for (i, &(a, ra)) in assigned.iter().enumerate() {
        let la = info.ranges[a];
        for &(b, rb) in &assigned[i + 1..] {
            if la.overlaps(&info.ranges[b]) {
                if let Some(kind) = clash(ra, rb) {
                    out.push(Violation {
                        kind,
                        vregs: vec![a.clone(), b.clone()],
                        registers: vec![ra.to_string(), rb.to_string()],
                    });
                }
            }
        }
        for seg in &info.phys {
            if la.overlaps(&seg.range) {
                if let Some(kind) = clash(ra, &seg.reg) {
                    out.push(Violation {
                        kind,
                        vregs: vec![a.clone(), seg.id()],
                        registers: vec![ra.to_string(), seg.reg.clone()],
                    });
                }
            }
        }
    }
}

/// Checks type, congruence and interference constraints of a complete map.
/// SPILL entries hold no register and are exempt.
pub fn verify_allocation(
    _f: &MachineFunction,
    info: &LivenessInfo,
    cmap: &ColorMap,
    md: &MachineDescription,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    for v in info.ranges.keys() {
        if !cmap.contains_key(v) {
            out.push(Violation {
                kind: ViolationKind::Unmapped,
                vregs: vec![v.clone()],
                registers: vec![],
            });
        }
    }
    check(
        info,
        md,
        |v| match cmap.get(v) {
            Some(Color::Reg(r)) => Some(r.as_str()),
            _ => None,
        },
        &mut out,
    );
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Same checks restricted to the vregs colored so far.
pub fn verify_partial(
    info: &LivenessInfo,
    asg: &PartialAssignment,
    md: &MachineDescription,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    check(info, md, |v| asg.colors.get(v).map(String::as_str), &mut out);
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liveness::compute_liveness;
    use crate::mir::parse_function;

    fn cmap(pairs: &[(&str, &str)]) -> ColorMap {
        pairs
            .iter()
            .map(|(v, r)| (v.to_string(), Color::from(r.to_string())))
            .collect()
    }

    #[test]
    fn empty_function_is_ok() {
        let f = parse_function("func f { }").unwrap();
        let md = MachineDescription::x86like();
        assert!(verify_allocation(&f, &compute_liveness(&f), &ColorMap::new(), &md).is_ok());
    }

    #[test]
    fn aliasing_overlap_is_a_congruence_violation() {
        let f = parse_function(
            "func f {\nbb0:\n  %a:gr64 = mov 1\n  %b:gr32 = mov 2\n  print %a\n  print %b\n}",
        )
        .unwrap();
        let md = MachineDescription::x86like();
        let info = compute_liveness(&f);
        let errs = verify_allocation(&f, &info, &cmap(&[("a", "rax"), ("b", "eax")]), &md).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].kind, ViolationKind::Congruence);
        assert!(verify_allocation(&f, &info, &cmap(&[("a", "rax"), ("b", "ebx")]), &md).is_ok());
    }

    #[test]
    fn reports_every_kind() {
        let f = parse_function(include_str!("../../data/running_example_x86.mir")).unwrap();
        let md = MachineDescription::x86like();
        let info = compute_liveness(&f);
        let m = cmap(&[("i", "eax"), ("x", "ebx"), ("y", "ebx"), ("z", "rcx")]);
        let errs = verify_allocation(&f, &info, &m, &md).unwrap_err();
        let kinds: Vec<ViolationKind> = errs.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::Type));
        assert!(kinds.contains(&ViolationKind::Interference));
        // %i holds eax across the div that writes $eax.
        assert!(errs
            .iter()
            .any(|v| v.vregs.contains(&"$eax@5".to_string()) && v.kind == ViolationKind::Interference));
        let missing = verify_allocation(&f, &info, &cmap(&[("i", "ebx")]), &md).unwrap_err();
        assert!(missing.iter().any(|v| v.kind == ViolationKind::Unmapped));
    }
}
