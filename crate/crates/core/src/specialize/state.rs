//! Virtualized interpreter state tracked during specialization.

use std::collections::BTreeMap;

use crate::ir::{Scalar, Value};

/// A specialized-function value or a constant not yet materialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Const(Scalar),
    Val(Value),
}

impl Operand {
    pub const ZERO: Operand = Operand::Const(Scalar {
        ty: crate::ir::ScalarType::I64,
        bits: 0,
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub addr: Operand,
    pub value: Operand,
    pub dirty: bool,
}

/// Flow-sensitive state while specializing a block. Registers absent from
/// the map hold zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VirtualState {
    pub regs: BTreeMap<u64, Operand>,
    pub locals: BTreeMap<u64, Cell>,
    /// Bottom of the virtual stack first.
    pub stack: Vec<Cell>,
}

impl VirtualState {
    pub fn reg(&self, i: u64) -> Operand {
        self.regs.get(&i).copied().unwrap_or(Operand::ZERO)
    }

    pub fn set_reg(&mut self, i: u64, v: Operand) {
        if v == Operand::ZERO {
            self.regs.remove(&i);
        } else {
            self.regs.insert(i, v);
        }
    }

    /// Dirty cells in write-back order: locals by index, then the stack from
    /// the top down.
    pub fn dirty_cells(&self) -> Vec<(SlotKey, Cell)> {
        let mut out: Vec<(SlotKey, Cell)> = self
            .locals
            .iter()
            .filter(|(_, c)| c.dirty)
            .map(|(&i, &c)| (SlotKey::Local(i), c))
            .collect();
        out.extend(
            self.stack
                .iter()
                .enumerate()
                .rev()
                .filter(|(_, c)| c.dirty)
                .map(|(i, &c)| (SlotKey::Stack(i), c)),
        );
        out
    }
}

/// Identifies a piece of virtual state that can become a block parameter.
/// Stack slots are numbered from the bottom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotKey {
    Reg(u64),
    Local(u64),
    Stack(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotState {
    Known(Operand),
    /// Predecessors disagree; the block receives the value as a parameter.
    Merged,
}

impl SlotState {
    fn meet(self, incoming: Operand) -> SlotState {
        match self {
            SlotState::Known(o) if o == incoming => self,
            _ => SlotState::Merged,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntryCell {
    pub addr: Operand,
    pub dirty: bool,
    pub value: SlotState,
}

/// Virtual state at a specialized block's entry, the meet over all incoming
/// edges seen so far.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntryState {
    /// Absent registers are `Known(0)`.
    pub regs: BTreeMap<u64, SlotState>,
    pub locals: BTreeMap<u64, EntryCell>,
    pub stack: Vec<EntryCell>,
}

fn known_cell(c: &Cell) -> EntryCell {
    EntryCell {
        addr: c.addr,
        dirty: c.dirty,
        value: SlotState::Known(c.value),
    }
}

impl EntryState {
    pub fn from_exit(s: &VirtualState) -> Self {
        EntryState {
            regs: s
                .regs
                .iter()
                .map(|(&i, &o)| (i, SlotState::Known(o)))
                .collect(),
            locals: s.locals.iter().map(|(&i, c)| (i, known_cell(c))).collect(),
            stack: s.stack.iter().map(known_cell).collect(),
        }
    }

    /// Meets an incoming exit state into this entry state. Returns whether
    /// anything changed.
    pub fn meet(&mut self, s: &VirtualState) -> bool {
        let before = self.clone();

        let keys: Vec<u64> = self.regs.keys().chain(s.regs.keys()).copied().collect();
        for i in keys {
            let cur = self
                .regs
                .get(&i)
                .copied()
                .unwrap_or(SlotState::Known(Operand::ZERO));
            let new = cur.meet(s.reg(i));
            if new == SlotState::Known(Operand::ZERO) {
                self.regs.remove(&i);
            } else {
                self.regs.insert(i, new);
            }
        }

        self.locals.retain(|i, e| match s.locals.get(i) {
            Some(c) if c.addr == e.addr && c.dirty == e.dirty => {
                e.value = e.value.meet(c.value);
                true
            }
            _ => false,
        });

        let compatible = self.stack.len() == s.stack.len()
            && self
                .stack
                .iter()
                .zip(&s.stack)
                .all(|(e, c)| e.addr == c.addr && e.dirty == c.dirty);
        if compatible {
            for (e, c) in self.stack.iter_mut().zip(&s.stack) {
                e.value = e.value.meet(c.value);
            }
        } else {
            self.stack.clear();
        }

        *self != before
    }

    /// Slots that arrive as block parameters, in parameter order.
    pub fn merged_slots(&self) -> Vec<SlotKey> {
        let mut out: Vec<SlotKey> = self
            .regs
            .iter()
            .filter(|(_, s)| **s == SlotState::Merged)
            .map(|(&i, _)| SlotKey::Reg(i))
            .collect();
        out.extend(
            self.locals
                .iter()
                .filter(|(_, c)| c.value == SlotState::Merged)
                .map(|(&i, _)| SlotKey::Local(i)),
        );
        out.extend(
            self.stack
                .iter()
                .enumerate()
                .filter(|(_, c)| c.value == SlotState::Merged)
                .map(|(i, _)| SlotKey::Stack(i)),
        );
        out
    }

    /// Working state at block entry, with merged slots read from `param`.
    pub fn instantiate(&self, mut param: impl FnMut(SlotKey) -> Value) -> VirtualState {
        let mut op = |k: SlotKey, s: SlotState| match s {
            SlotState::Known(o) => o,
            SlotState::Merged => Operand::Val(param(k)),
        };
        let mut out = VirtualState::default();
        for (&i, &s) in &self.regs {
            out.set_reg(i, op(SlotKey::Reg(i), s));
        }
        for (&i, c) in &self.locals {
            out.locals.insert(
                i,
                Cell {
                    addr: c.addr,
                    dirty: c.dirty,
                    value: op(SlotKey::Local(i), c.value),
                },
            );
        }
        for (i, c) in self.stack.iter().enumerate() {
            out.stack.push(Cell {
                addr: c.addr,
                dirty: c.dirty,
                value: op(SlotKey::Stack(i), c.value),
            });
        }
        out
    }
}

/// Value of a slot in an exit state. Used to fill slot arguments on edges.
pub fn slot_value(s: &VirtualState, k: SlotKey) -> Option<Operand> {
    match k {
        SlotKey::Reg(i) => Some(s.reg(i)),
        SlotKey::Local(i) => s.locals.get(&i).map(|c| c.value),
        SlotKey::Stack(i) => s.stack.get(i).map(|c| c.value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: u64) -> Operand {
        Operand::Const(Scalar::i64(v))
    }

    fn cell(addr: u64, v: Operand, dirty: bool) -> Cell {
        Cell {
            addr: c(addr),
            value: v,
            dirty,
        }
    }

    #[test]
    fn registers_merge_to_params() {
        let mut a = VirtualState::default();
        a.set_reg(3, c(1));
        a.set_reg(4, c(7));
        let mut e = EntryState::from_exit(&a);
        let mut b = VirtualState::default();
        b.set_reg(3, c(2));
        b.set_reg(4, c(7));
        assert!(e.meet(&b));
        assert_eq!(e.merged_slots(), vec![SlotKey::Reg(3)]);
        assert!(!e.meet(&b));
        // A missing register is zero, which disagrees with 7.
        assert!(e.meet(&VirtualState::default()));
        assert_eq!(e.merged_slots(), vec![SlotKey::Reg(3), SlotKey::Reg(4)]);
    }

    #[test]
    fn locals_drop_on_disagreement() {
        let mut a = VirtualState::default();
        a.locals.insert(0, cell(8, c(1), true));
        a.locals.insert(1, cell(16, c(1), true));
        a.locals.insert(2, cell(24, c(1), false));
        let mut e = EntryState::from_exit(&a);
        let mut b = a.clone();
        b.locals.insert(0, cell(8, c(2), true));
        b.locals.insert(1, cell(16, c(1), false));
        b.locals.remove(&2);
        assert!(e.meet(&b));
        assert_eq!(e.locals.len(), 1);
        assert_eq!(e.merged_slots(), vec![SlotKey::Local(0)]);
    }

    #[test]
    fn stacks_invalidate_on_shape_mismatch() {
        let mut a = VirtualState::default();
        a.stack.push(cell(8, c(1), true));
        let mut e = EntryState::from_exit(&a);
        let mut b = a.clone();
        b.stack.push(cell(16, c(1), true));
        assert!(e.meet(&b));
        assert!(e.stack.is_empty());
        assert!(!e.meet(&a));
    }

    #[test]
    fn dirty_cells_order() {
        let mut s = VirtualState::default();
        s.locals.insert(2, cell(8, c(1), true));
        s.locals.insert(0, cell(0, c(1), true));
        s.locals.insert(1, cell(4, c(1), false));
        s.stack.push(cell(100, c(1), true));
        s.stack.push(cell(108, c(1), true));
        let keys: Vec<SlotKey> = s.dirty_cells().into_iter().map(|(k, _)| k).collect();
        assert_eq!(
            keys,
            vec![
                SlotKey::Local(0),
                SlotKey::Local(2),
                SlotKey::Stack(1),
                SlotKey::Stack(0)
            ]
        );
    }
}
