use std::collections::{BTreeMap, BTreeSet};

use super::{MachineFunction, Opcode, Operand};

/// Block-level control-flow graph. Blocks are identified by their index in
/// layout order; block 0 is the entry.
#[derive(Debug, Clone)]
pub struct Cfg {
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
    pub reachable: Vec<bool>,
}

impl Cfg {
    pub fn new(f: &MachineFunction) -> Self {
        let n = f.blocks.len();
        let mut succs = vec![Vec::new(); n];
        for (b, block) in f.blocks.iter().enumerate() {
            match block.terminator() {
                Some(t) if t.opcode == Opcode::Ret => {}
                Some(t) => {
                    for l in t.labels() {
                        if let Some(s) = f.block_index(l) {
                            if !succs[b].contains(&s) {
                                succs[b].push(s);
                            }
                        }
                    }
                }
                None => {
                    if b + 1 < n {
                        succs[b].push(b + 1);
                    }
                }
            }
        }
        Self::from_succs(succs)
    }

    /// Builds a CFG from raw successor lists (entry = 0).
    pub fn from_succs(succs: Vec<Vec<usize>>) -> Self {
        let n = succs.len();
        let mut preds = vec![Vec::new(); n];
        for (b, ss) in succs.iter().enumerate() {
            for &s in ss {
                if !preds[s].contains(&b) {
                    preds[s].push(b);
                }
            }
        }
        let mut reachable = vec![false; n];
        if n > 0 {
            let mut stack = vec![0];
            reachable[0] = true;
            while let Some(b) = stack.pop() {
                for &s in &succs[b] {
                    if !reachable[s] {
                        reachable[s] = true;
                        stack.push(s);
                    }
                }
            }
        }
        Cfg {
            succs,
            preds,
            reachable,
        }
    }

    pub fn len(&self) -> usize {
        self.succs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succs.is_empty()
    }

    pub fn postorder(&self) -> Vec<usize> {
        let n = self.len();
        let mut order = Vec::with_capacity(n);
        if n == 0 {
            return order;
        }
        let mut visited = vec![false; n];
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        visited[0] = true;
        while let Some(&mut (b, ref mut next)) = stack.last_mut() {
            if *next < self.succs[b].len() {
                let s = self.succs[b][*next];
                *next += 1;
                if !visited[s] {
                    visited[s] = true;
                    stack.push((s, 0));
                }
            } else {
                order.push(b);
                stack.pop();
            }
        }
        order
    }

    pub fn reverse_postorder(&self) -> Vec<usize> {
        let mut po = self.postorder();
        po.reverse();
        po
    }

    pub fn dominators(&self) -> DominatorTree {
        DominatorTree::compute(self)
    }

    /// Depth of natural-loop nesting per block (0 outside any loop).
    pub fn loop_depths(&self) -> Vec<u32> {
        let dom = self.dominators();
        let n = self.len();
        // One loop per header; bodies of several back edges to a header merge.
        let mut bodies: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for t in 0..n {
            if !self.reachable[t] {
                continue;
            }
            for &h in &self.succs[t] {
                if dom.dominates(h, t) {
                    let body = bodies.entry(h).or_default();
                    body.insert(h);
                    let mut stack = vec![t];
                    while let Some(x) = stack.pop() {
                        if body.insert(x) {
                            for &p in &self.preds[x] {
                                if self.reachable[p] {
                                    stack.push(p);
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut depth = vec![0u32; n];
        for body in bodies.values() {
            for &b in body {
                depth[b] += 1;
            }
        }
        depth
    }
}

/// Immediate-dominator tree computed with the iterative algorithm of
/// Cooper, Harvey and Kennedy over reverse postorder.
#[derive(Debug, Clone)]
pub struct DominatorTree {
    idom: Vec<Option<usize>>,
    reachable: Vec<bool>,
}

impl DominatorTree {
    pub fn compute(cfg: &Cfg) -> Self {
        let n = cfg.len();
        let rpo = cfg.reverse_postorder();
        let mut rpo_index = vec![usize::MAX; n];
        for (i, &b) in rpo.iter().enumerate() {
            rpo_index[b] = i;
        }
        let mut idom: Vec<Option<usize>> = vec![None; n];
        if n == 0 {
            return DominatorTree {
                idom,
                reachable: cfg.reachable.clone(),
            };
        }
        idom[0] = Some(0);
        let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
            while a != b {
                while rpo_index[a] > rpo_index[b] {
                    a = idom[a].expect("processed");
                }
                while rpo_index[b] > rpo_index[a] {
                    b = idom[b].expect("processed");
                }
            }
            a
        };
        let mut changed = true;
        while changed {
            changed = false;
            for &b in rpo.iter().skip(1) {
                let mut new_idom: Option<usize> = None;
                for &p in &cfg.preds[b] {
                    if idom[p].is_some() {
                        new_idom = Some(match new_idom {
                            None => p,
                            Some(cur) => intersect(&idom, p, cur),
                        });
                    }
                }
                if new_idom.is_some() && idom[b] != new_idom {
                    idom[b] = new_idom;
                    changed = true;
                }
            }
        }
        idom[0] = None;
        DominatorTree {
            idom,
            reachable: cfg.reachable.clone(),
        }
    }

    pub fn idom(&self, b: usize) -> Option<usize> {
        self.idom[b]
    }

    /// Reflexive dominance; unreachable blocks dominate nothing and are
    /// dominated by nothing.
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        if !self.reachable[a] || !self.reachable[b] {
            return false;
        }
        let mut cur = Some(b);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.idom[c];
        }
        false
    }

    pub fn strictly_dominates(&self, a: usize, b: usize) -> bool {
        a != b && self.dominates(a, b)
    }

    /// DF(B) = { X : B dominates a predecessor of X and does not strictly
    /// dominate X }, computed by walking up from each predecessor.
    pub fn frontiers(&self, cfg: &Cfg) -> Vec<BTreeSet<usize>> {
        let n = cfg.len();
        let mut df = vec![BTreeSet::new(); n];
        for x in 0..n {
            if !cfg.reachable[x] {
                continue;
            }
            for &p in &cfg.preds[x] {
                if !cfg.reachable[p] {
                    continue;
                }
                let mut runner = Some(p);
                while let Some(r) = runner {
                    if Some(r) == self.idom[x] {
                        break;
                    }
                    df[r].insert(x);
                    runner = self.idom[r];
                }
            }
        }
        df
    }
}

/// Dominance frontiers of every reachable block, keyed by label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DominanceFrontiers {
    pub frontier: BTreeMap<String, BTreeSet<String>>,
    /// Blocks not reachable from entry; excluded from `frontier`.
    pub unreachable: Vec<String>,
}

impl MachineFunction {
    pub fn cfg(&self) -> Cfg {
        Cfg::new(self)
    }

    pub fn dominance_frontier(&self) -> DominanceFrontiers {
        let cfg = self.cfg();
        let dom = cfg.dominators();
        let df = dom.frontiers(&cfg);
        let mut frontier = BTreeMap::new();
        let mut unreachable = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            if !cfg.reachable[b] {
                unreachable.push(block.label.clone());
                continue;
            }
            frontier.insert(
                block.label.clone(),
                df[b].iter().map(|&x| self.blocks[x].label.clone()).collect(),
            );
        }
        DominanceFrontiers {
            frontier,
            unreachable,
        }
    }

    /// Blocks with a `br`/`jmp` target referring to `label`.
    pub fn branches_to(&self, label: &str) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| {
                b.terminator()
                    .map(|t| t.uses.iter().any(|o| matches!(o, Operand::Label(l) if l == label)))
                    .unwrap_or(false)
            })
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn straight_line_has_empty_frontiers() {
        let cfg = Cfg::from_succs(vec![vec![1], vec![2], vec![]]);
        let df = cfg.dominators().frontiers(&cfg);
        assert!(df.iter().all(|s| s.is_empty()));
    }

    #[test]
    fn diamond_frontiers() {
        // A=0 -> B=1, C=2 -> D=3
        let cfg = Cfg::from_succs(vec![vec![1, 2], vec![3], vec![3], vec![]]);
        let df = cfg.dominators().frontiers(&cfg);
        assert_eq!(df[0], set(&[]));
        assert_eq!(df[1], set(&[3]));
        assert_eq!(df[2], set(&[3]));
        assert_eq!(df[3], set(&[]));
    }

    #[test]
    fn self_loop_entry_is_its_own_frontier() {
        let cfg = Cfg::from_succs(vec![vec![0, 1], vec![]]);
        let df = cfg.dominators().frontiers(&cfg);
        assert_eq!(df[0], set(&[0]));
        assert_eq!(df[1], set(&[]));
    }

    #[test]
    fn unreachable_blocks_are_excluded() {
        let cfg = Cfg::from_succs(vec![vec![2], vec![2], vec![]]);
        let dom = cfg.dominators();
        assert!(!dom.dominates(0, 1));
        assert!(dom.dominates(0, 2));
        let df = dom.frontiers(&cfg);
        assert!(df[1].is_empty());
        assert!(df[0].is_empty());
    }

    #[test]
    fn nested_loop_depths() {
        // 0 -> 1 (outer header) -> 2 (inner header) -> 3 (inner body) -> 2
        // 2 -> 4 (outer latch) -> 1 ; 1 -> 5 exit
        let cfg = Cfg::from_succs(vec![
            vec![1],
            vec![2, 5],
            vec![3, 4],
            vec![2],
            vec![1],
            vec![],
        ]);
        assert_eq!(cfg.loop_depths(), vec![0, 1, 2, 2, 1, 0]);
    }

    #[test]
    fn frontier_by_label_reports_unreachable() {
        let f = super::super::parse_function(
            "func f {\nbb0:\n  jmp bb2\nbb1:\n  jmp bb2\nbb2:\n  ret\n}",
        )
        .unwrap();
        let df = f.dominance_frontier();
        assert_eq!(df.unreachable, vec!["bb1".to_string()]);
        assert!(df.frontier.values().all(|s| s.is_empty()));
    }
}
