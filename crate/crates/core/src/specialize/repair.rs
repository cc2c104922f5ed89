//! SSA repair for the generic function, run before specialization.
//!
//! Specialization duplicates blocks per context, so a block may be reached in
//! a context different from the one its dominating definitions were
//! specialized in. To keep the output in SSA form, every value live into a
//! *cut* block is turned into an explicit block parameter there, and uses
//! below are renamed (classic phi placement at the iterated dominance
//! frontier plus a dominator-tree renaming walk).
//!
//! Cut selection follows the highest-same-context-ancestor (HSCA) analysis:
//! successors of blocks that change the context are cuts, and so is any block
//! whose inbound HSCA does not dominate it. The naive mode cuts at every
//! block.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::ir::{
    Block, BlockCall, Cfg, DomTree, Function, Liveness, NameAllocator, Opcode, Terminator, Value,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SsaRepairMode {
    #[default]
    Hsca,
    Naive,
}

impl std::str::FromStr for SsaRepairMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hsca" => Ok(SsaRepairMode::Hsca),
            "naive" => Ok(SsaRepairMode::Naive),
            _ => Err(format!(
                "unknown SSA repair mode '{}' (expected hsca or naive)",
                s
            )),
        }
    }
}

impl std::fmt::Display for SsaRepairMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SsaRepairMode::Hsca => "hsca",
            SsaRepairMode::Naive => "naive",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RepairInfo {
    pub cut_blocks: Vec<Block>,
    pub params_added: usize,
}

pub fn changes_context(f: &Function, b: Block) -> bool {
    f.block(b)
        .insts
        .iter()
        .any(|i| matches!(i.op, Opcode::Intrinsic(x) if x.changes_context()))
}

fn unique_label(used: &mut HashSet<String>, base: &str) -> String {
    let mut n = 1;
    loop {
        let candidate = format!("{}.{}", base, n);
        if used.insert(candidate.clone()) {
            return candidate;
        }
        n += 1;
    }
}

/// Ends a block right after each `specialized_value`, so the value split
/// always applies to the block terminator.
pub fn split_after_value_splits(f: &mut Function) {
    let mut used: HashSet<String> = f.blocks.iter().map(|b| b.label.clone()).collect();
    let mut b = 0;
    while b < f.blocks.len() {
        let data = &f.blocks[b];
        let pos = data.insts.iter().position(|i| {
            matches!(
                i.op,
                Opcode::Intrinsic(crate::ir::Intrinsic::SpecializedValue)
            )
        });
        if let Some(i) = pos {
            let label = unique_label(&mut used, &data.label);
            let cont = f.add_block(label);
            let data = &mut f.blocks[b];
            let rest = data.insts.split_off(i + 1);
            let term =
                std::mem::replace(&mut data.term, Terminator::Br(BlockCall::new(cont, vec![])));
            let c = f.block_mut(cont);
            c.insts = rest;
            c.term = term;
        }
        b += 1;
    }
}

/// Cut blocks under the given mode. The entry block is never a cut.
pub fn find_cuts(f: &Function, cfg: &Cfg, dom: &DomTree, mode: SsaRepairMode) -> Vec<bool> {
    let n = f.blocks.len();
    let mut cut = vec![false; n];
    if mode == SsaRepairMode::Naive {
        for &b in cfg.rpo.iter().skip(1) {
            cut[b.index()] = true;
        }
        return cut;
    }
    let ctx_change: Vec<bool> = f.block_ids().map(|b| changes_context(f, b)).collect();
    let mut hsca: Vec<Option<Block>> = vec![None; n];
    hsca[0] = Some(Block::ENTRY);
    let mut changed = true;
    while changed {
        changed = false;
        for &b in cfg.rpo.iter().skip(1) {
            let preds: Vec<Block> = cfg.preds[b.index()]
                .iter()
                .copied()
                .filter(|&p| cfg.is_reachable(p))
                .collect();
            let mut new = None;
            if !cut[b.index()] {
                if preds.iter().any(|p| ctx_change[p.index()]) {
                    cut[b.index()] = true;
                } else {
                    for p in preds {
                        let Some(h) = hsca[p.index()] else { continue };
                        if !dom.dominates(h, b) {
                            cut[b.index()] = true;
                            break;
                        }
                        new = Some(new.map_or(h, |a| dom.lca(a, h)));
                    }
                }
            }
            let new = if cut[b.index()] {
                Some(b)
            } else {
                new.or(Some(b))
            };
            if new != hsca[b.index()] {
                hsca[b.index()] = new;
                changed = true;
            }
        }
    }
    cut
}

/// Adds block parameters at cut blocks and wherever phis are then needed,
/// renaming uses so the function stays in valid SSA form.
pub fn ssa_repair(f: &mut Function, mode: SsaRepairMode) -> RepairInfo {
    let cfg = Cfg::new(f);
    let dom = DomTree::new(&cfg);
    let live = Liveness::new(f, &cfg);
    let cuts = find_cuts(f, &cfg, &dom, mode);
    let frontiers = dom.frontiers(&cfg);
    let fparams: HashSet<Value> = f.params.iter().copied().collect();

    let mut def_block: HashMap<Value, Block> = HashMap::new();
    for b in f.block_ids() {
        for &p in &f.block(b).params {
            def_block.insert(p, b);
        }
        for inst in &f.block(b).insts {
            if let Some(r) = inst.result {
                def_block.insert(r, b);
            }
        }
    }

    let mut vars: BTreeMap<Value, BTreeSet<Block>> = BTreeMap::new();
    let cut_blocks: Vec<Block> = f.block_ids().filter(|b| cuts[b.index()]).collect();
    for &c in &cut_blocks {
        for &v in live.live_in(c) {
            if !fparams.contains(&v) && def_block.contains_key(&v) {
                vars.entry(v).or_default().insert(c);
            }
        }
    }

    let mut names = NameAllocator::for_function(f);
    let mut params_added = 0;
    for (v, cut_set) in vars {
        let d = def_block[&v];
        let mut defs: BTreeSet<Block> = cut_set.clone();
        defs.insert(d);
        let mut param_blocks = cut_set;
        for b in dom.iterated_frontier(&frontiers, defs) {
            if live.live_in(b).contains(&v) {
                param_blocks.insert(b);
            }
        }
        let ty = f.value_type(v);
        let base = f.value_name(v).to_string();
        let mut new_param: HashMap<Block, Value> = HashMap::new();
        for &pb in &param_blocks {
            let p = f.add_value(names.fresh(&base), ty);
            f.block_mut(pb).params.push(p);
            new_param.insert(pb, p);
            params_added += 1;
            for &pred in &cfg.preds[pb.index()] {
                for e in f.block_mut(pred).term.edges_mut() {
                    if e.block == pb {
                        e.args.push(v);
                    }
                }
            }
        }
        rename(f, &dom, v, d, &new_param);
    }
    RepairInfo {
        cut_blocks,
        params_added,
    }
}

fn rename(
    f: &mut Function,
    dom: &DomTree,
    v: Value,
    def: Block,
    new_param: &HashMap<Block, Value>,
) {
    let mut stack = vec![(Block::ENTRY, v)];
    while let Some((b, incoming)) = stack.pop() {
        let mut cur = new_param.get(&b).copied().unwrap_or(incoming);
        let data = f.block_mut(b);
        for inst in &mut data.insts {
            for a in &mut inst.args {
                if *a == v {
                    *a = cur;
                }
            }
            if b == def && inst.result == Some(v) {
                cur = v;
            }
        }
        data.term.for_each_use_mut(|a| {
            if *a == v {
                *a = cur;
            }
        });
        for &c in dom.children(b) {
            stack.push((c, cur));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, validate_function};

    fn func(text: &str) -> Function {
        parse_module(text).unwrap().functions.remove(0)
    }

    const DIAMOND: &str = "\
func @f(%c: i32, %x: i64) -> i64 {
block ^entry:
  %k = const.i64 3
  br_if %c, ^a, ^b
block ^a:
  %y = iadd %x, %k
  br ^join(%y)
block ^b:
  br ^join(%k)
block ^join(%r: i64):
  %s = iadd %r, %k
  return %s
}
";

    #[test]
    fn single_context_diamond_has_no_cuts() {
        let mut f = func(DIAMOND);
        let before = f.clone();
        let info = ssa_repair(&mut f, SsaRepairMode::Hsca);
        assert!(info.cut_blocks.is_empty());
        assert_eq!(info.params_added, 0);
        assert_eq!(f, before);
    }

    #[test]
    fn naive_diamond_threads_live_values() {
        let mut f = func(DIAMOND);
        let info = ssa_repair(&mut f, SsaRepairMode::Naive);
        assert_eq!(info.cut_blocks.len(), 3);
        // %k is live into a, b and join.
        assert_eq!(info.params_added, 3);
        assert!(validate_function(&f).is_empty(), "{}", f);
    }

    #[test]
    fn straight_line_unchanged_by_naive() {
        let mut f =
            func("func @f(%x: i64) -> i64 {\nblock ^e:\n  %y = iadd %x, %x\n  return %y\n}\n");
        let before = f.clone();
        assert_eq!(ssa_repair(&mut f, SsaRepairMode::Naive).params_added, 0);
        assert_eq!(f, before);
    }

    #[test]
    fn two_blocks_one_live_value() {
        let mut f = func(
            "func @f(%x: i64) -> i64 {\nblock ^e:\n  %y = iadd %x, %x\n  br ^b\nblock ^b:\n  return %y\n}\n",
        );
        assert_eq!(ssa_repair(&mut f, SsaRepairMode::Naive).params_added, 1);
        assert!(validate_function(&f).is_empty());
    }

    const LOOP: &str = "\
func @f(%n: i64) -> i64 {
block ^entry:
  %zero = const.i64 0
  %one = const.i64 1
  intrinsic.push_context %zero
  br ^head(%zero)
block ^head(%pc: i64):
  %next = iadd %pc, %one
  %c = icmp.lt_u %next, %n
  br_if %c, ^latch, ^exit
block ^latch:
  intrinsic.update_context %next
  br ^head(%next)
block ^exit:
  return %next
}
";

    #[test]
    fn context_backedge_makes_header_a_cut() {
        let mut f = func(LOOP);
        let info = ssa_repair(&mut f, SsaRepairMode::Hsca);
        assert_eq!(info.cut_blocks, vec![Block(1)]);
        // %one is live into the header.
        assert_eq!(info.params_added, 1);
        assert!(validate_function(&f).is_empty(), "{}", f);
        let mut naive = func(LOOP);
        let n = ssa_repair(&mut naive, SsaRepairMode::Naive);
        assert!(n.params_added >= info.params_added);
        assert!(validate_function(&naive).is_empty(), "{}", naive);
    }

    #[test]
    fn value_split_ends_block() {
        let mut f = func(
            "\
func @f(%x: i64) -> i64 {
block ^entry:
  %lo = const.i64 0
  %hi = const.i64 3
  %k = intrinsic.specialized_value %x, %lo, %hi
  %y = iadd %k, %k
  return %y
}
",
        );
        split_after_value_splits(&mut f);
        assert_eq!(f.blocks.len(), 2);
        assert_eq!(f.blocks[0].insts.len(), 3);
        let info = ssa_repair(&mut f, SsaRepairMode::Hsca);
        assert_eq!(info.cut_blocks, vec![Block(1)]);
        assert_eq!(f.blocks[1].params.len(), 1);
        assert!(validate_function(&f).is_empty(), "{}", f);
    }
}
