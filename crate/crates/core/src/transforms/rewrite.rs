use std::collections::BTreeSet;

use log::debug;

use super::{insert_spill, verify_allocation, Color, ColorMap, TransformError};
use crate::igraph::{build_interference_graph, legal_registers, PartialAssignment};
use crate::liveness::compute_liveness;
use crate::machine::MachineDescription;
use crate::mir::{MachineFunction, Operand};

/// Replaces every vreg by its register. Vregs mapped to SPILL must already
/// have been rewritten by [`insert_spill`].
pub fn apply_assignment(
    f: &MachineFunction,
    md: &MachineDescription,
    cmap: &ColorMap,
) -> Result<MachineFunction, TransformError> {
    let types = f.vregs();
    for (v, ty) in &types {
        match cmap.get(v) {
            None => return Err(TransformError::MissingMapping(v.clone())),
            Some(Color::Spill) => return Err(TransformError::NotMaterialized(v.clone())),
            Some(Color::Reg(r)) => {
                let legal = md.regs_of_type(ty).map(|rs| rs.contains(r)).unwrap_or(false);
                if !legal {
                    return Err(TransformError::TypeMismatch {
                        vreg: v.clone(),
                        ty: ty.clone(),
                        reg: r.clone(),
                    });
                }
            }
        }
    }
    let mut g = f.clone();
    let assign = |op: &mut Operand| {
        if let Operand::Virtual(v) = op {
            let r = cmap[&v.name].reg().expect("checked above").to_string();
            *op = Operand::Physical(r);
        }
    };
    g.params.iter_mut().for_each(assign);
    for block in &mut g.blocks {
        for inst in &mut block.insts {
            inst.operands_mut().for_each(assign);
        }
    }
    g.finish()?;
    Ok(g)
}

/// Outcome of turning a decision map (colors plus SPILL marks) into a
/// verified, fully physical function.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub function: MachineFunction,
    /// The function after spill code, before physical rewriting.
    pub virtual_function: MachineFunction,
    /// Total map over every vreg of `virtual_function`.
    pub assignment: ColorMap,
    /// Vregs spilled by decision, in the order given.
    pub spilled: Vec<String>,
    /// Vregs spilled additionally because a spill temporary had no register.
    pub cascaded: Vec<String>,
}

impl Materialized {
    pub fn all_spilled(&self) -> impl Iterator<Item = &String> {
        self.spilled.iter().chain(&self.cascaded)
    }
}

/// Inserts spill code for every SPILL entry, colors the spill temporaries
/// greedily in start order, rewrites to physical registers, and verifies.
///
/// When a temporary finds no legal register, a colored vreg live across it
/// (preferring ones not accessed by the same instruction, then the lightest)
/// is spilled as well and coloring restarts.
pub fn materialize(
    f: &MachineFunction,
    md: &MachineDescription,
    decisions: &ColorMap,
) -> Result<Materialized, TransformError> {
    let mut func = f.clone();
    let mut colors: ColorMap = ColorMap::new();
    let mut spilled = Vec::new();
    let mut temps: BTreeSet<String> = BTreeSet::new();
    for (v, c) in decisions {
        match c {
            Color::Reg(r) => {
                colors.insert(v.clone(), Color::Reg(r.clone()));
            }
            Color::Spill => spilled.push(v.clone()),
        }
    }
    for v in &spilled {
        let r = insert_spill(&func, v)?;
        temps.extend(r.temps);
        func = r.function;
    }
    let mut cascaded = Vec::new();
    'retry: loop {
        let info = compute_liveness(&func);
        let g = build_interference_graph(&func, &info);
        let mut asg = PartialAssignment::default();
        for (v, c) in &colors {
            if let (Some(r), false) = (c.reg(), temps.contains(v)) {
                asg.colors.insert(v.clone(), r.to_string());
            }
        }
        let mut order: Vec<&String> = temps.iter().collect();
        order.sort_by_key(|t| (info.ranges[*t].start, (*t).clone()));
        for t in order {
            let legal = legal_registers(&g, md, &asg, t).expect("temp is an unassigned vreg");
            if let Some(r) = legal.chi.first() {
                asg.colors.insert(t.clone(), r.clone());
                continue;
            }
            let range = info.ranges[t];
            let accessed_here = |u: &str| {
                range.points().any(|p| {
                    func.instruction_at(p)
                        .is_some_and(|i| i.accesses_vreg(u))
                })
            };
            let victim = g
                .neighbors(t)
                .filter(|u| u.is_virtual() && !temps.contains(&u.id) && asg.colors.contains_key(&u.id))
                .min_by(|a, b| {
                    (accessed_here(&a.id), a.weight, &a.id)
                        .partial_cmp(&(accessed_here(&b.id), b.weight, &b.id))
                        .expect("finite weights")
                })
                .map(|u| u.id.clone());
            let Some(victim) = victim else {
                return Err(TransformError::Unallocatable(t.clone()));
            };
            debug!("cascade spill of %{victim} to free a register for %{t}");
            let r = insert_spill(&func, &victim)?;
            temps.extend(r.temps);
            func = r.function;
            colors.remove(&victim);
            cascaded.push(victim);
            continue 'retry;
        }
        let assignment: ColorMap = asg
            .colors
            .into_iter()
            .map(|(v, r)| (v, Color::Reg(r)))
            .collect();
        let info = compute_liveness(&func);
        if let Err(violations) = verify_allocation(&func, &info, &assignment, md) {
            return Err(TransformError::Verification(violations));
        }
        let physical = apply_assignment(&func, md, &assignment)?;
        return Ok(Materialized {
            function: physical,
            virtual_function: func,
            assignment,
            spilled,
            cascaded,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::{interpret, interpret_with_machine, parse_function, DEFAULT_FUEL};

    fn running() -> MachineFunction {
        parse_function(include_str!("../../data/running_example.mir")).unwrap()
    }

    fn cmap(pairs: &[(&str, &str)]) -> ColorMap {
        pairs
            .iter()
            .map(|(v, r)| (v.to_string(), Color::from(r.to_string())))
            .collect()
    }

    #[test]
    fn no_vregs_is_identity() {
        let f = parse_function("func f {\nbb0:\n  $eax = mov 1\n  print $eax\n}").unwrap();
        let md = MachineDescription::x86like();
        assert_eq!(apply_assignment(&f, &md, &ColorMap::new()).unwrap(), f);
    }

    #[test]
    fn legal_four_register_map_preserves_output() {
        let md = MachineDescription::x86like();
        let m = cmap(&[("i", "eax"), ("x", "ebx"), ("y", "ecx"), ("z", "edx")]);
        let g = apply_assignment(&running(), &md, &m).unwrap();
        assert!(!g.has_vregs());
        assert_eq!(
            interpret_with_machine(&g, &md, &[], DEFAULT_FUEL).unwrap().printed,
            vec![10, 20, 12, 2]
        );
    }

    #[test]
    fn wrong_width_is_a_type_mismatch() {
        let md = MachineDescription::x86like();
        let m = cmap(&[("i", "rax"), ("x", "ebx"), ("y", "ecx"), ("z", "edx")]);
        assert!(matches!(
            apply_assignment(&running(), &md, &m),
            Err(TransformError::TypeMismatch { .. })
        ));
        let partial = cmap(&[("i", "eax")]);
        assert!(matches!(
            apply_assignment(&running(), &md, &partial),
            Err(TransformError::MissingMapping(_))
        ));
    }

    #[test]
    fn materialize_spills_and_colors_temps() {
        let md = MachineDescription::tiny3();
        let f = running();
        let m = cmap(&[("i", "SPILL"), ("x", "r0"), ("y", "r1"), ("z", "r2")]);
        let out = materialize(&f, &md, &m).unwrap();
        assert_eq!(out.spilled, vec!["i"]);
        assert_eq!(
            interpret_with_machine(&out.function, &md, &[], DEFAULT_FUEL),
            interpret(&f, &[], DEFAULT_FUEL)
        );
    }
}
