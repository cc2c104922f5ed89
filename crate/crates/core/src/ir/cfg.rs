//! Control-flow graph queries: predecessors, reverse postorder, dominators
//! (Cooper, Harvey and Kennedy's iterative algorithm), dominance frontiers and
//! liveness.

use std::collections::BTreeSet;

use super::{Block, Function, Value};

#[derive(Clone, Debug)]
pub struct Cfg {
    /// Deduplicated successors, in terminator edge order.
    pub succs: Vec<Vec<Block>>,
    /// Deduplicated predecessors, in block order.
    pub preds: Vec<Vec<Block>>,
    /// Reachable blocks in reverse postorder, starting at the entry.
    pub rpo: Vec<Block>,
    rpo_index: Vec<Option<usize>>,
}

impl Cfg {
    pub fn new(f: &Function) -> Self {
        let n = f.blocks.len();
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for b in f.block_ids() {
            for s in f.block(b).term.successors() {
                if s.index() >= n {
                    continue;
                }
                if !succs[b.index()].contains(&s) {
                    succs[b.index()].push(s);
                }
                if !preds[s.index()].contains(&b) {
                    preds[s.index()].push(b);
                }
            }
        }
        for p in &mut preds {
            p.sort();
        }

        let mut post = Vec::with_capacity(n);
        if n > 0 {
            let mut visited = vec![false; n];
            let mut stack = vec![(Block::ENTRY, 0usize)];
            visited[0] = true;
            while let Some(&mut (b, ref mut i)) = stack.last_mut() {
                if let Some(&s) = succs[b.index()].get(*i) {
                    *i += 1;
                    if !visited[s.index()] {
                        visited[s.index()] = true;
                        stack.push((s, 0));
                    }
                } else {
                    post.push(b);
                    stack.pop();
                }
            }
        }
        post.reverse();
        let mut rpo_index = vec![None; n];
        for (i, b) in post.iter().enumerate() {
            rpo_index[b.index()] = Some(i);
        }
        Cfg {
            succs,
            preds,
            rpo: post,
            rpo_index,
        }
    }

    pub fn is_reachable(&self, b: Block) -> bool {
        self.rpo_index.get(b.index()).is_some_and(|i| i.is_some())
    }

    pub fn rpo_index(&self, b: Block) -> Option<usize> {
        self.rpo_index[b.index()]
    }

    pub fn num_blocks(&self) -> usize {
        self.succs.len()
    }
}

#[derive(Clone, Debug)]
pub struct DomTree {
    idom: Vec<Option<Block>>,
    depth: Vec<usize>,
    children: Vec<Vec<Block>>,
    reachable: Vec<bool>,
}

impl DomTree {
    pub fn new(cfg: &Cfg) -> Self {
        let n = cfg.num_blocks();
        let mut idom: Vec<Option<Block>> = vec![None; n];
        let mut reachable = vec![false; n];
        for &b in &cfg.rpo {
            reachable[b.index()] = true;
        }
        if n == 0 {
            return DomTree {
                idom,
                depth: Vec::new(),
                children: Vec::new(),
                reachable,
            };
        }
        idom[0] = Some(Block::ENTRY);
        let intersect = |idom: &[Option<Block>], mut a: Block, mut b: Block| {
            while a != b {
                while cfg.rpo_index(a) > cfg.rpo_index(b) {
                    a = idom[a.index()].unwrap();
                }
                while cfg.rpo_index(b) > cfg.rpo_index(a) {
                    b = idom[b.index()].unwrap();
                }
            }
            a
        };
        let mut changed = true;
        while changed {
            changed = false;
            for &b in cfg.rpo.iter().skip(1) {
                let mut new_idom = None;
                for &p in &cfg.preds[b.index()] {
                    if idom[p.index()].is_none() {
                        continue;
                    }
                    new_idom = Some(match new_idom {
                        None => p,
                        Some(cur) => intersect(&idom, p, cur),
                    });
                }
                if new_idom != idom[b.index()] {
                    idom[b.index()] = new_idom;
                    changed = true;
                }
            }
        }
        idom[0] = None;

        let mut depth = vec![0; n];
        let mut children = vec![Vec::new(); n];
        for &b in cfg.rpo.iter().skip(1) {
            let parent = idom[b.index()].unwrap();
            depth[b.index()] = depth[parent.index()] + 1;
            children[parent.index()].push(b);
        }
        DomTree {
            idom,
            depth,
            children,
            reachable,
        }
    }

    pub fn idom(&self, b: Block) -> Option<Block> {
        self.idom[b.index()]
    }

    pub fn children(&self, b: Block) -> &[Block] {
        &self.children[b.index()]
    }

    pub fn is_reachable(&self, b: Block) -> bool {
        self.reachable[b.index()]
    }

    /// Reflexive dominance. Unreachable blocks dominate nothing and are
    /// dominated by nothing.
    pub fn dominates(&self, a: Block, b: Block) -> bool {
        if !self.is_reachable(a) || !self.is_reachable(b) {
            return false;
        }
        let mut cur = b;
        while self.depth[cur.index()] > self.depth[a.index()] {
            cur = self.idom[cur.index()].unwrap();
        }
        cur == a
    }

    /// Nearest common dominator of two reachable blocks.
    pub fn lca(&self, mut a: Block, mut b: Block) -> Block {
        while self.depth[a.index()] > self.depth[b.index()] {
            a = self.idom[a.index()].unwrap();
        }
        while self.depth[b.index()] > self.depth[a.index()] {
            b = self.idom[b.index()].unwrap();
        }
        while a != b {
            a = self.idom[a.index()].unwrap();
            b = self.idom[b.index()].unwrap();
        }
        a
    }

    /// Dominance frontier of every block.
    pub fn frontiers(&self, cfg: &Cfg) -> Vec<BTreeSet<Block>> {
        let mut df = vec![BTreeSet::new(); cfg.num_blocks()];
        for &b in &cfg.rpo {
            let preds: Vec<Block> = cfg.preds[b.index()]
                .iter()
                .copied()
                .filter(|&p| self.is_reachable(p))
                .collect();
            if preds.len() < 2 {
                continue;
            }
            let stop = self.idom(b);
            for p in preds {
                let mut runner = Some(p);
                while runner.is_some() && runner != stop {
                    let r = runner.unwrap();
                    df[r.index()].insert(b);
                    runner = self.idom(r);
                }
            }
        }
        df
    }

    /// Iterated dominance frontier of `defs`.
    pub fn iterated_frontier(
        &self,
        frontiers: &[BTreeSet<Block>],
        defs: impl IntoIterator<Item = Block>,
    ) -> BTreeSet<Block> {
        let mut out = BTreeSet::new();
        let mut work: Vec<Block> = defs.into_iter().collect();
        while let Some(b) = work.pop() {
            for &d in &frontiers[b.index()] {
                if out.insert(d) {
                    work.push(d);
                }
            }
        }
        out
    }
}

/// Per-block live-in sets. Block parameters are defined at block entry, so
/// they are never live-in to their own block.
#[derive(Clone, Debug)]
pub struct Liveness {
    pub live_in: Vec<BTreeSet<Value>>,
}

impl Liveness {
    pub fn new(f: &Function, cfg: &Cfg) -> Self {
        let n = f.blocks.len();
        let mut uses = vec![BTreeSet::new(); n];
        let mut defs = vec![BTreeSet::new(); n];
        for b in f.block_ids() {
            let data = f.block(b);
            let (u, d) = (&mut uses[b.index()], &mut defs[b.index()]);
            d.extend(data.params.iter().copied());
            for inst in &data.insts {
                for a in &inst.args {
                    if !d.contains(a) {
                        u.insert(*a);
                    }
                }
                if let Some(r) = inst.result {
                    d.insert(r);
                }
            }
            let mut term_uses = data.term.operands();
            for e in data.term.edges() {
                term_uses.extend(e.args.iter().copied());
            }
            for a in term_uses {
                if !d.contains(&a) {
                    u.insert(a);
                }
            }
        }
        let mut live_in: Vec<BTreeSet<Value>> = uses.clone();
        let mut changed = true;
        while changed {
            changed = false;
            for &b in cfg.rpo.iter().rev() {
                let mut set = uses[b.index()].clone();
                for &s in &cfg.succs[b.index()] {
                    for v in &live_in[s.index()] {
                        if !defs[b.index()].contains(v) {
                            set.insert(*v);
                        }
                    }
                }
                if set != live_in[b.index()] {
                    live_in[b.index()] = set;
                    changed = true;
                }
            }
        }
        Liveness { live_in }
    }

    pub fn live_in(&self, b: Block) -> &BTreeSet<Value> {
        &self.live_in[b.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn func(text: &str) -> Function {
        parse_module(text).unwrap().functions.remove(0)
    }

    const DIAMOND: &str = "\
func @f(%c: i32, %x: i64) -> i64 {
block ^entry:
  br_if %c, ^a, ^b
block ^a:
  %y = iadd %x, %x
  br ^join(%y)
block ^b:
  br ^join(%x)
block ^join(%r: i64):
  return %r
}
";

    #[test]
    fn diamond_dominators() {
        let f = func(DIAMOND);
        let cfg = Cfg::new(&f);
        let dom = DomTree::new(&cfg);
        let [e, a, b, j] = [0, 1, 2, 3].map(Block);
        assert_eq!(dom.idom(j), Some(e));
        assert!(dom.dominates(e, a));
        assert!(!dom.dominates(a, j));
        assert_eq!(dom.lca(a, b), e);
        let df = dom.frontiers(&cfg);
        assert_eq!(df[a.index()], [j].into());
        assert!(df[e.index()].is_empty());
    }

    #[test]
    fn loop_liveness() {
        let f = func(
            "\
func @f(%n: i64) -> i64 {
block ^entry:
  %z = const.i64 0
  br ^head(%z)
block ^head(%i: i64):
  %one = const.i64 1
  %next = iadd %i, %one
  %c = icmp.lt_u %next, %n
  br_if %c, ^head(%next), ^exit
block ^exit:
  return %next
}
",
        );
        let cfg = Cfg::new(&f);
        let live = Liveness::new(&f, &cfg);
        let names = |b: u32| -> Vec<String> {
            live.live_in(Block(b))
                .iter()
                .map(|&v| f.value_name(v).to_string())
                .collect()
        };
        assert_eq!(names(1), vec!["n"]);
        assert_eq!(names(2), vec!["next"]);
    }

    #[test]
    fn unreachable_blocks_have_no_dominators() {
        let f = func("func @f() {\nblock ^e:\n  return\nblock ^dead:\n  br ^e\n}\n");
        let cfg = Cfg::new(&f);
        let dom = DomTree::new(&cfg);
        assert!(!cfg.is_reachable(Block(1)));
        assert!(!dom.dominates(Block(0), Block(1)));
    }
}
