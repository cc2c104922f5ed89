//! Specialization contexts and their interning.

use std::collections::HashMap;
use std::fmt;

/// One context stack entry. `Loop` entries come from `push_context` and
/// `update_context`; `Split` entries are pushed for each arm of a
/// `specialized_value` split and are discarded by the next update or pop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextElem {
    Loop(u64),
    Split(u64),
}

impl fmt::Display for ContextElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextElem::Loop(v) => write!(f, "{}", v),
            ContextElem::Split(v) => write!(f, "={}", v),
        }
    }
}

pub type Context = Vec<ContextElem>;

pub fn display_context(ctx: &[ContextElem]) -> String {
    let items: Vec<String> = ctx.iter().map(|e| e.to_string()).collect();
    format!("[{}]", items.join(", "))
}

/// Drops trailing `Split` entries and then one `Loop` entry. Returns `false`
/// if there was no `Loop` entry to remove.
fn pop_loop(ctx: &mut Context) -> bool {
    while let Some(ContextElem::Split(_)) = ctx.last() {
        ctx.pop();
    }
    ctx.pop().is_some()
}

pub fn push_context(ctx: &mut Context, v: u64) {
    ctx.push(ContextElem::Loop(v));
}

/// Replaces the innermost loop entry, or pushes when the stack is empty.
pub fn update_context(ctx: &mut Context, v: u64) {
    pop_loop(ctx);
    ctx.push(ContextElem::Loop(v));
}

pub fn pop_context(ctx: &mut Context) -> bool {
    pop_loop(ctx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CtxId(pub u32);

impl CtxId {
    pub const ROOT: CtxId = CtxId(0);
}

/// Interns contexts, refusing to grow past a fixed ceiling.
#[derive(Debug)]
pub struct Contexts {
    ids: HashMap<Context, CtxId>,
    list: Vec<Context>,
    limit: usize,
}

impl Contexts {
    pub fn new(limit: usize) -> Self {
        let mut c = Contexts {
            ids: HashMap::new(),
            list: Vec::new(),
            limit,
        };
        c.ids.insert(Vec::new(), CtxId::ROOT);
        c.list.push(Vec::new());
        c
    }

    /// Returns `None` if interning would exceed the ceiling.
    pub fn intern(&mut self, ctx: Context) -> Option<CtxId> {
        if let Some(&id) = self.ids.get(&ctx) {
            return Some(id);
        }
        if self.list.len() >= self.limit {
            return None;
        }
        let id = CtxId(self.list.len() as u32);
        self.ids.insert(ctx.clone(), id);
        self.list.push(ctx);
        Some(id)
    }

    pub fn get(&self, id: CtxId) -> &Context {
        &self.list[id.0 as usize]
    }

    pub fn into_list(self) -> Vec<Context> {
        self.list
    }
}
