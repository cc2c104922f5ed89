//! Lowers intrinsics to plain IR so annotated functions run directly.
//!
//! Context markers and `assert_const` disappear, `specialized_value` passes
//! its operand through, registers live in a 256-entry scratch region appended
//! to memory, and local/stack accesses become eager loads and stores at their
//! canonical addresses.

use std::collections::HashMap;

use crate::ir::{
    BinaryOp, Function, Inst, Intrinsic, MemWidth, Module, NameAllocator, Opcode, Scalar,
    ScalarType, Value,
};

pub const REGISTER_COUNT: u64 = 256;
pub const SCRATCH_BYTES: u64 = REGISTER_COUNT * 8;

/// Start of the register scratch region for a memory of `size` bytes.
pub fn scratch_base(size: u64) -> u64 {
    size.div_ceil(8) * 8
}

/// Polyfills every function, growing memory by the register scratch region
/// when any function uses register intrinsics.
pub fn polyfill_module(m: &Module) -> Module {
    let mut out = m.clone();
    let base = scratch_base(m.memory.size);
    let uses_registers = m.functions.iter().any(|f| {
        f.blocks.iter().flat_map(|b| &b.insts).any(|i| {
            matches!(
                i.op,
                Opcode::Intrinsic(Intrinsic::LoadRegister | Intrinsic::StoreRegister)
            )
        })
    });
    if uses_registers {
        out.memory.size = base + SCRATCH_BYTES;
    }
    for f in &mut out.functions {
        *f = polyfill_function(f, base);
    }
    out
}

pub fn polyfill_function(f: &Function, scratch: u64) -> Function {
    let mut out = f.clone();
    let mut names = NameAllocator::for_function(f);
    let mut alias: HashMap<Value, Value> = HashMap::new();

    for bi in 0..out.blocks.len() {
        let insts = std::mem::take(&mut out.blocks[bi].insts);
        let mut new = Vec::with_capacity(insts.len());
        for inst in insts {
            let Opcode::Intrinsic(kind) = inst.op else {
                new.push(inst);
                continue;
            };
            let a = &inst.args;
            let mut emit = |op: Opcode, args: Vec<Value>, result: Option<Value>| {
                new.push(Inst { result, op, args });
            };
            match kind {
                Intrinsic::PushContext
                | Intrinsic::UpdateContext
                | Intrinsic::PopContext
                | Intrinsic::AssertConst
                | Intrinsic::Flush => {}
                Intrinsic::SpecializedValue => {
                    if let Some(r) = inst.result {
                        alias.insert(r, a[0]);
                    }
                }
                Intrinsic::LoadRegister | Intrinsic::StoreRegister => {
                    let eight = out.add_value(names.fresh("reg.scale"), ScalarType::I64);
                    let base = out.add_value(names.fresh("reg.base"), ScalarType::I64);
                    let off = out.add_value(names.fresh("reg.off"), ScalarType::I64);
                    let addr = out.add_value(names.fresh("reg.addr"), ScalarType::I64);
                    emit(Opcode::Const(Scalar::i64(8)), vec![], Some(eight));
                    emit(Opcode::Const(Scalar::i64(scratch)), vec![], Some(base));
                    emit(Opcode::Binary(BinaryOp::Mul), vec![a[0], eight], Some(off));
                    emit(Opcode::Binary(BinaryOp::Add), vec![base, off], Some(addr));
                    if kind == Intrinsic::LoadRegister {
                        emit(Opcode::Load(MemWidth::W64), vec![addr], inst.result);
                    } else {
                        emit(Opcode::Store(MemWidth::W64), vec![addr, a[1]], None);
                    }
                }
                Intrinsic::LocalRead | Intrinsic::StackRead => {
                    emit(Opcode::Load(MemWidth::W64), vec![a[1]], inst.result)
                }
                Intrinsic::StackPop => emit(Opcode::Load(MemWidth::W64), vec![a[0]], inst.result),
                Intrinsic::LocalWrite | Intrinsic::StackWrite => {
                    emit(Opcode::Store(MemWidth::W64), vec![a[1], a[2]], None)
                }
                Intrinsic::StackPush => emit(Opcode::Store(MemWidth::W64), vec![a[0], a[1]], None),
            }
        }
        out.blocks[bi].insts = new;
    }

    if !alias.is_empty() {
        let resolve = |mut v: Value| {
            while let Some(&next) = alias.get(&v) {
                v = next;
            }
            v
        };
        out.rewrite_uses(resolve);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{run, ExecOptions};
    use crate::ir::{parse_module, validate};

    #[test]
    fn context_intrinsics_vanish() {
        let text = "\
func @f(%x: i64) -> i64 {
block ^e:
  intrinsic.push_context %x
  %y = iadd %x, %x
  intrinsic.update_context %y
  intrinsic.pop_context
  intrinsic.assert_const %y
  return %y
}
";
        let m = parse_module(text).unwrap();
        let p = polyfill_module(&m);
        let insts = &p.functions[0].blocks[0].insts;
        assert_eq!(insts.len(), 1);
        assert_eq!(insts[0].op, Opcode::Binary(BinaryOp::Add));
        assert_eq!(p.memory.size, 0);
    }

    #[test]
    fn stack_pair_is_store_then_load() {
        let text = "\
memory 64
func @f(%x: i64) -> i64 {
block ^e:
  %a = const.i64 16
  intrinsic.stack_push %a, %x
  %y = intrinsic.stack_pop %a
  return %y
}
";
        let p = polyfill_module(&parse_module(text).unwrap());
        let ops: Vec<String> = p.functions[0].blocks[0]
            .insts
            .iter()
            .map(|i| i.op.mnemonic())
            .collect();
        assert_eq!(ops, ["const.i64", "store.64", "load.64"]);
        let r = run(&p, "f", &[42], &ExecOptions::default()).unwrap();
        assert_eq!(r.outcome.return_bits(), Some(42));
    }

    #[test]
    fn registers_use_scratch_memory() {
        let text = "\
memory 13
func @f(%x: i64) -> i64 {
block ^e:
  %i = const.i64 3
  %j = const.i64 4
  intrinsic.store_register %i, %x
  %y = intrinsic.load_register %i
  %z = intrinsic.load_register %j
  %k = intrinsic.specialized_value %y, %z, %y
  %s = iadd %k, %z
  return %s
}
";
        let p = polyfill_module(&parse_module(text).unwrap());
        assert_eq!(p.memory.size, 16 + SCRATCH_BYTES);
        assert!(validate(&p).is_empty());
        let r = run(&p, "f", &[9], &ExecOptions::default()).unwrap();
        assert_eq!(r.outcome.return_bits(), Some(9));
        assert_eq!(&r.final_memory[16 + 24..16 + 32], &9u64.to_le_bytes());
    }
}
