//! Clean-up passes applied to specialized output: dead-code elimination
//! (including dead block parameters), merging straight-line block chains,
//! threading empty forwarding blocks, and compaction.

use std::collections::HashMap;

use crate::ir::{Block, BlockCall, Cfg, Function, Opcode, Terminator, Value};

pub fn cleanup(f: &mut Function) {
    loop {
        let mut changed = false;
        changed |= simplify_branches(f);
        changed |= dce(f);
        changed |= merge_chains(f);
        changed |= thread_forwarders(f);
        if !changed {
            break;
        }
    }
    compact(f);
}

fn has_side_effect(op: &Opcode) -> bool {
    // Loads stay: they can trap.
    !op.is_pure()
}

/// `br_if` whose two edges are identical becomes `br`; likewise a `br_table`.
fn simplify_branches(f: &mut Function) -> bool {
    let mut changed = false;
    for b in &mut f.blocks {
        let single = match &b.term {
            Terminator::BrIf {
                then_dest,
                else_dest,
                ..
            } if then_dest == else_dest => Some(then_dest.clone()),
            Terminator::BrTable {
                targets, default, ..
            } if targets.iter().all(|t| t == default) => Some(default.clone()),
            _ => None,
        };
        if let Some(c) = single {
            b.term = Terminator::Br(c);
            changed = true;
        }
    }
    changed
}

enum Def {
    Inst(Block, usize),
    Param(Block, usize),
}

pub fn dce(f: &mut Function) -> bool {
    let cfg = Cfg::new(f);
    let mut defs: HashMap<Value, Def> = HashMap::new();
    // Edges into each block: (pred, edge index within its terminator).
    let mut incoming: Vec<Vec<(Block, usize)>> = vec![Vec::new(); f.blocks.len()];
    for &b in &cfg.rpo {
        let data = f.block(b);
        for (i, &p) in data.params.iter().enumerate() {
            defs.insert(p, Def::Param(b, i));
        }
        for (i, inst) in data.insts.iter().enumerate() {
            if let Some(r) = inst.result {
                defs.insert(r, Def::Inst(b, i));
            }
        }
        for (ei, e) in data.term.edges().iter().enumerate() {
            incoming[e.block.index()].push((b, ei));
        }
    }

    let mut live: std::collections::HashSet<Value> = f.params.iter().copied().collect();
    let mut work: Vec<Value> = Vec::new();
    for &b in &cfg.rpo {
        let data = f.block(b);
        for inst in &data.insts {
            if has_side_effect(&inst.op) {
                work.extend(inst.args.iter().copied());
            }
        }
        work.extend(data.term.operands());
    }
    while let Some(v) = work.pop() {
        if !live.insert(v) {
            continue;
        }
        match defs.get(&v) {
            Some(Def::Inst(b, i)) => work.extend(f.block(*b).insts[*i].args.iter().copied()),
            Some(Def::Param(b, i)) => {
                for &(p, ei) in &incoming[b.index()] {
                    work.push(f.block(p).term.edges()[ei].args[*i]);
                }
            }
            None => {}
        }
    }

    let mut changed = false;
    for &b in &cfg.rpo {
        let data = f.block_mut(b);
        let before = data.insts.len();
        data.insts.retain(|inst| {
            has_side_effect(&inst.op) || inst.result.is_some_and(|r| live.contains(&r))
        });
        changed |= data.insts.len() != before;

        let dead: Vec<usize> = data
            .params
            .iter()
            .enumerate()
            .filter(|(_, p)| !live.contains(p))
            .map(|(i, _)| i)
            .collect();
        if dead.is_empty() {
            continue;
        }
        changed = true;
        let keep = |i: usize| !dead.contains(&i);
        let params = std::mem::take(&mut data.params);
        data.params = params
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, p)| p)
            .collect();
        for &(p, ei) in &incoming[b.index()] {
            let mut edges = f.block_mut(p).term.edges_mut();
            let e = &mut edges[ei];
            let args = std::mem::take(&mut e.args);
            e.args = args
                .into_iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, a)| a)
                .collect();
        }
    }
    changed
}

fn edge_counts(f: &Function) -> Vec<usize> {
    let cfg = Cfg::new(f);
    let mut counts = vec![0; f.blocks.len()];
    for &b in &cfg.rpo {
        for e in f.block(b).term.edges() {
            counts[e.block.index()] += 1;
        }
    }
    counts
}

fn substitute(f: &mut Function, map: &HashMap<Value, Value>) {
    if map.is_empty() {
        return;
    }
    f.rewrite_uses(|v| {
        let mut v = v;
        while let Some(&n) = map.get(&v) {
            v = n;
        }
        v
    });
}

/// Merges a block into its predecessor when that predecessor ends in a plain
/// branch and is the block's only incoming edge.
fn merge_chains(f: &mut Function) -> bool {
    let mut changed = false;
    let mut counts = edge_counts(f);
    let cfg = Cfg::new(f);
    let mut map = HashMap::new();
    for &p in &cfg.rpo {
        while let Terminator::Br(call) = &f.block(p).term {
            let b = call.block;
            if b == p || b == Block::ENTRY || counts[b.index()] != 1 {
                break;
            }
            let args = call.args.clone();
            let target = f.block_mut(b);
            for (&param, &arg) in target.params.iter().zip(&args) {
                map.insert(param, arg);
            }
            target.params.clear();
            let insts = std::mem::take(&mut target.insts);
            let term = std::mem::replace(&mut target.term, Terminator::Trap("merged".into()));
            counts[b.index()] = 0;
            let pred = f.block_mut(p);
            pred.insts.extend(insts);
            pred.term = term;
            changed = true;
        }
    }
    substitute(f, &map);
    changed
}

/// Redirects edges that target an empty block ending in `br` straight to that
/// block's destination.
fn thread_forwarders(f: &mut Function) -> bool {
    let cfg = Cfg::new(f);
    let mut uses: HashMap<Value, usize> = HashMap::new();
    for &b in &cfg.rpo {
        let data = f.block(b);
        for inst in &data.insts {
            for &a in &inst.args {
                *uses.entry(a).or_default() += 1;
            }
        }
        let mut t = data.term.operands();
        for e in data.term.edges() {
            t.extend(e.args.iter().copied());
        }
        for a in t {
            *uses.entry(a).or_default() += 1;
        }
    }

    let mut forward: HashMap<Block, BlockCall> = HashMap::new();
    for &b in cfg.rpo.iter().skip(1) {
        let data = f.block(b);
        let Terminator::Br(call) = &data.term else {
            continue;
        };
        if !data.insts.is_empty() || call.block == b {
            continue;
        }
        // Params may only feed this block's own branch.
        let own: usize = data
            .params
            .iter()
            .map(|p| call.args.iter().filter(|a| *a == p).count())
            .sum();
        let total: usize = data
            .params
            .iter()
            .map(|p| uses.get(p).copied().unwrap_or(0))
            .sum();
        if own != total {
            continue;
        }
        forward.insert(b, call.clone());
    }
    if forward.is_empty() {
        return false;
    }

    let mut changed = false;
    for &p in &cfg.rpo {
        let mut term = std::mem::replace(&mut f.block_mut(p).term, Terminator::Return(None));
        for e in term.edges_mut() {
            // Follow a bounded number of hops so forwarding cycles terminate.
            for _ in 0..8 {
                let Some(fwd) = forward.get(&e.block) else {
                    break;
                };
                if e.block == p {
                    break;
                }
                let params = &f.block(e.block).params;
                let subst: HashMap<Value, Value> =
                    params.iter().copied().zip(e.args.iter().copied()).collect();
                let args = fwd
                    .args
                    .iter()
                    .map(|a| subst.get(a).copied().unwrap_or(*a))
                    .collect();
                *e = BlockCall::new(fwd.block, args);
                changed = true;
            }
        }
        f.block_mut(p).term = term;
    }
    changed
}

/// Drops unreachable blocks and unreferenced values, renumbering the rest.
pub fn compact(f: &mut Function) {
    let cfg = Cfg::new(f);
    let mut order: Vec<Block> = f.block_ids().filter(|&b| cfg.is_reachable(b)).collect();
    order.sort();
    let block_map: HashMap<Block, Block> = order
        .iter()
        .enumerate()
        .map(|(i, &b)| (b, Block(i as u32)))
        .collect();
    let old_blocks = std::mem::take(&mut f.blocks);
    for (i, data) in old_blocks.into_iter().enumerate() {
        if block_map.contains_key(&Block(i as u32)) {
            f.blocks.push(data);
        }
    }
    for data in &mut f.blocks {
        for e in data.term.edges_mut() {
            e.block = block_map[&e.block];
        }
    }

    let mut used = vec![false; f.values.len()];
    for &p in &f.params {
        used[p.index()] = true;
    }
    for data in &f.blocks {
        for &p in &data.params {
            used[p.index()] = true;
        }
        for inst in &data.insts {
            if let Some(r) = inst.result {
                used[r.index()] = true;
            }
            for &a in &inst.args {
                used[a.index()] = true;
            }
        }
        for v in data.term.operands() {
            used[v.index()] = true;
        }
        for e in data.term.edges() {
            for &a in &e.args {
                used[a.index()] = true;
            }
        }
    }
    let mut remap = vec![Value(u32::MAX); f.values.len()];
    let old_values = std::mem::take(&mut f.values);
    for (i, data) in old_values.into_iter().enumerate() {
        if used[i] {
            remap[i] = Value(f.values.len() as u32);
            f.values.push(data);
        }
    }
    let r = |v: Value| remap[v.index()];
    f.params = f.params.iter().map(|&v| r(v)).collect();
    for data in &mut f.blocks {
        data.params = data.params.iter().map(|&v| r(v)).collect();
        for inst in &mut data.insts {
            inst.result = inst.result.map(r);
        }
    }
    f.rewrite_uses(r);
}
