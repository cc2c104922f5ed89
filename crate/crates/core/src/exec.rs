//! Reference executor for the IR.
//!
//! A direct big-step interpreter: each function keeps a dense register file
//! indexed by SSA value number. Intrinsics in any function reachable
//! from the entry point are rejected up front; polyfill them first.

use std::collections::{BTreeMap, HashMap};

use crate::ir::{
    BinaryOp, Block, BlockCall, CmpOp, Function, MemWidth, Module, Opcode, Scalar, ScalarType,
    Terminator,
};

pub const DEFAULT_FUEL: u64 = 100_000_000;
pub const MAX_CALL_DEPTH: usize = 1000;

/// Evaluates a pure opcode on concrete operands. Returns `None` for impure
/// opcodes or malformed operand lists.
pub fn eval_scalar(op: &Opcode, args: &[Scalar]) -> Option<Scalar> {
    match (op, args) {
        (Opcode::Const(s), []) => Some(*s),
        (Opcode::Binary(op), [a, b]) => {
            let ty = a.ty;
            let width = ty.bit_width() as u64;
            let bits = match op {
                BinaryOp::Add => a.bits.wrapping_add(b.bits),
                BinaryOp::Sub => a.bits.wrapping_sub(b.bits),
                BinaryOp::Mul => a.bits.wrapping_mul(b.bits),
                BinaryOp::And => a.bits & b.bits,
                BinaryOp::Or => a.bits | b.bits,
                BinaryOp::Xor => a.bits ^ b.bits,
                BinaryOp::Shl => a.bits << (b.bits & (width - 1)),
                BinaryOp::ShrU => a.bits >> (b.bits & (width - 1)),
            };
            Some(Scalar::new(ty, bits))
        }
        (Opcode::Icmp(op), [a, b]) => {
            let r = match op {
                CmpOp::Eq => a.bits == b.bits,
                CmpOp::Ne => a.bits != b.bits,
                CmpOp::LtU => a.bits < b.bits,
                CmpOp::LtS => signed(*a) < signed(*b),
            };
            Some(Scalar::i32(r as u64))
        }
        (Opcode::Select, [c, a, b]) => Some(if c.bits != 0 { *a } else { *b }),
        (Opcode::Zext, [a]) => Some(Scalar::i64(a.bits)),
        (Opcode::Trunc, [a]) => Some(Scalar::i32(a.bits)),
        _ => None,
    }
}

fn signed(s: Scalar) -> i64 {
    match s.ty {
        ScalarType::I32 => s.bits as u32 as i32 as i64,
        ScalarType::I64 => s.bits as i64,
    }
}

/// A labeled address range whose loads are counted separately.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WatchRange {
    pub label: String,
    pub start: u64,
    pub len: u64,
}

impl WatchRange {
    pub fn new(label: impl Into<String>, start: u64, len: u64) -> Self {
        WatchRange {
            label: label.into(),
            start,
            len,
        }
    }

    fn overlaps(&self, addr: u64, n: u64) -> bool {
        addr < self.start.saturating_add(self.len) && self.start < addr.saturating_add(n)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecMetrics {
    /// Instructions plus terminators executed.
    pub insts_executed: u64,
    pub loads: u64,
    pub stores: u64,
    /// Loads whose byte span overlaps each watch range.
    pub loads_in_range: BTreeMap<String, u64>,
    /// Executed `br_if` and `br_table` terminators.
    pub branches: u64,
    pub prints: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Return(Option<Scalar>),
    Trap(String),
}

impl Outcome {
    pub fn is_trap(&self) -> bool {
        matches!(self, Outcome::Trap(_))
    }

    pub fn return_bits(&self) -> Option<u64> {
        match self {
            Outcome::Return(Some(s)) => Some(s.bits),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecResult {
    pub outcome: Outcome,
    pub metrics: ExecMetrics,
    pub final_memory: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("no function named @{0}")]
    UnknownFunction(String),
    #[error("@{func} takes {expected} arguments, {got} given")]
    ArgCount {
        func: String,
        expected: usize,
        got: usize,
    },
    #[error("@{func} contains intrinsic '{name}'; polyfill intrinsics before execution")]
    Intrinsic { func: String, name: String },
    #[error("data segment at {offset} does not fit in memory of size {size}")]
    BadMemory { offset: u64, size: u64 },
}

#[derive(Clone, Debug)]
pub struct ExecOptions {
    pub fuel: u64,
    pub watch: Vec<WatchRange>,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            fuel: DEFAULT_FUEL,
            watch: Vec::new(),
        }
    }
}

impl ExecOptions {
    pub fn with_watch(mut self, w: WatchRange) -> Self {
        self.watch.push(w);
        self
    }

    pub fn with_fuel(mut self, fuel: u64) -> Self {
        self.fuel = fuel;
        self
    }
}

/// Runs `func` with `args` (masked to the parameter types).
pub fn run(
    m: &Module,
    func: &str,
    args: &[u64],
    opts: &ExecOptions,
) -> Result<ExecResult, ExecError> {
    let index: HashMap<&str, usize> = m
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.as_str(), i))
        .collect();
    let &fi = index
        .get(func)
        .ok_or_else(|| ExecError::UnknownFunction(func.to_string()))?;
    let f = &m.functions[fi];
    if args.len() != f.params.len() {
        return Err(ExecError::ArgCount {
            func: func.to_string(),
            expected: f.params.len(),
            got: args.len(),
        });
    }
    // Only functions reachable through calls must be intrinsic-free.
    let mut seen = vec![false; m.functions.len()];
    let mut work = vec![fi];
    seen[fi] = true;
    while let Some(gi) = work.pop() {
        let g = &m.functions[gi];
        for inst in g.blocks.iter().flat_map(|b| &b.insts) {
            match &inst.op {
                Opcode::Intrinsic(i) => {
                    return Err(ExecError::Intrinsic {
                        func: g.name.clone(),
                        name: i.name().to_string(),
                    })
                }
                Opcode::Call(callee) => {
                    if let Some(&ci) = index.get(callee.as_str()) {
                        if !seen[ci] {
                            seen[ci] = true;
                            work.push(ci);
                        }
                    }
                }
                _ => {}
            }
        }
    }
    for s in &m.memory.segments {
        if s.offset.saturating_add(s.bytes.len() as u64) > m.memory.size {
            return Err(ExecError::BadMemory {
                offset: s.offset,
                size: m.memory.size,
            });
        }
    }

    let mut machine = Machine {
        module: m,
        index,
        memory: m.memory.to_bytes(),
        metrics: ExecMetrics::default(),
        fuel: opts.fuel,
        watch: &opts.watch,
    };
    for w in &opts.watch {
        machine.metrics.loads_in_range.insert(w.label.clone(), 0);
    }
    let args: Vec<Scalar> = f
        .params
        .iter()
        .zip(args)
        .map(|(&p, &a)| Scalar::new(f.value_type(p), a))
        .collect();
    let outcome = match machine.call(f, &args, 0) {
        Ok(v) => Outcome::Return(v),
        Err(Trap(msg)) => Outcome::Trap(msg),
    };
    Ok(ExecResult {
        outcome,
        metrics: machine.metrics,
        final_memory: machine.memory,
    })
}

struct Trap(String);

struct Machine<'a> {
    module: &'a Module,
    index: HashMap<&'a str, usize>,
    memory: Vec<u8>,
    metrics: ExecMetrics,
    fuel: u64,
    watch: &'a [WatchRange],
}

impl<'a> Machine<'a> {
    fn tick(&mut self) -> Result<(), Trap> {
        if self.fuel == 0 {
            return Err(Trap("out of fuel".into()));
        }
        self.fuel -= 1;
        self.metrics.insts_executed += 1;
        Ok(())
    }

    fn span(&self, addr: u64, w: MemWidth) -> Result<std::ops::Range<usize>, Trap> {
        let n = w.bytes();
        match addr.checked_add(n) {
            Some(end) if end <= self.memory.len() as u64 => Ok(addr as usize..end as usize),
            _ => Err(Trap(format!(
                "out-of-bounds {}-byte access at address {}",
                n, addr
            ))),
        }
    }

    fn load(&mut self, addr: u64, w: MemWidth) -> Result<Scalar, Trap> {
        let range = self.span(addr, w)?;
        self.metrics.loads += 1;
        for r in self.watch {
            if r.overlaps(addr, w.bytes()) {
                *self.metrics.loads_in_range.get_mut(&r.label).unwrap() += 1;
            }
        }
        let mut bits = 0u64;
        for (i, &b) in self.memory[range].iter().enumerate() {
            bits |= (b as u64) << (8 * i);
        }
        Ok(Scalar::new(w.load_type(), bits))
    }

    fn store(&mut self, addr: u64, w: MemWidth, v: u64) -> Result<(), Trap> {
        let range = self.span(addr, w)?;
        self.metrics.stores += 1;
        for (i, slot) in self.memory[range].iter_mut().enumerate() {
            *slot = (v >> (8 * i)) as u8;
        }
        Ok(())
    }

    fn call(
        &mut self,
        f: &'a Function,
        args: &[Scalar],
        depth: usize,
    ) -> Result<Option<Scalar>, Trap> {
        if depth >= MAX_CALL_DEPTH {
            return Err(Trap("call stack exhausted".into()));
        }
        let mut regs = vec![Scalar::i64(0); f.values.len()];
        for (&p, &a) in f.params.iter().zip(args) {
            regs[p.index()] = a;
        }
        let mut block = Block::ENTRY;
        let mut scratch = Vec::new();
        loop {
            let data = f.block(block);
            for inst in &data.insts {
                self.tick()?;
                scratch.clear();
                scratch.extend(inst.args.iter().map(|a| regs[a.index()]));
                let result = match &inst.op {
                    Opcode::Load(w) => Some(self.load(scratch[0].bits, *w)?),
                    Opcode::Store(w) => {
                        self.store(scratch[0].bits, *w, scratch[1].bits)?;
                        None
                    }
                    Opcode::Print => {
                        self.metrics.prints.push(scratch[0].bits);
                        None
                    }
                    Opcode::Call(name) => {
                        let Some(&gi) = self.index.get(name.as_str()) else {
                            return Err(Trap(format!("call to unknown function @{}", name)));
                        };
                        let g = &self.module.functions[gi];
                        let call_args = scratch.clone();
                        self.call(g, &call_args, depth + 1)?
                    }
                    Opcode::Intrinsic(_) => unreachable!("rejected before execution"),
                    op => eval_scalar(op, &scratch),
                };
                if let (Some(r), Some(v)) = (inst.result, result) {
                    regs[r.index()] = v;
                }
            }
            self.tick()?;
            let edge: &BlockCall = match &data.term {
                Terminator::Br(c) => c,
                Terminator::BrIf {
                    cond,
                    then_dest,
                    else_dest,
                } => {
                    self.metrics.branches += 1;
                    if regs[cond.index()].bits != 0 {
                        then_dest
                    } else {
                        else_dest
                    }
                }
                Terminator::BrTable {
                    selector,
                    targets,
                    default,
                } => {
                    self.metrics.branches += 1;
                    let s = regs[selector.index()].bits;
                    usize::try_from(s)
                        .ok()
                        .and_then(|i| targets.get(i))
                        .unwrap_or(default)
                }
                Terminator::Return(v) => return Ok(v.map(|v| regs[v.index()])),
                Terminator::Trap(msg) => return Err(Trap(msg.clone())),
            };
            scratch.clear();
            scratch.extend(edge.args.iter().map(|a| regs[a.index()]));
            let target = f.block(edge.block);
            for (&p, &v) in target.params.iter().zip(&scratch) {
                regs[p.index()] = v;
            }
            block = edge.block;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    #[test]
    fn scalar_examples() {
        let mul = Opcode::Binary(BinaryOp::Mul);
        let add = Opcode::Binary(BinaryOp::Add);
        assert_eq!(
            eval_scalar(&mul, &[Scalar::i64(3), Scalar::i64(4)]),
            Some(Scalar::i64(12))
        );
        assert_eq!(
            eval_scalar(&add, &[Scalar::i64(u64::MAX), Scalar::i64(1)]),
            Some(Scalar::i64(0))
        );
        assert_eq!(
            eval_scalar(&Opcode::Icmp(CmpOp::LtU), &[Scalar::i64(1), Scalar::i64(2)]),
            Some(Scalar::i32(1))
        );
        assert_eq!(
            eval_scalar(
                &Opcode::Icmp(CmpOp::LtS),
                &[Scalar::i32(0xffff_ffff), Scalar::i32(0)]
            ),
            Some(Scalar::i32(1))
        );
        assert_eq!(
            eval_scalar(
                &Opcode::Binary(BinaryOp::Shl),
                &[Scalar::i32(1), Scalar::i32(33)]
            ),
            Some(Scalar::i32(2))
        );
    }

    #[test]
    fn returns_sum() {
        let m = parse_module(
            "func @f() -> i64 {\nblock ^e:\n  %a = const.i64 2\n  %b = const.i64 3\n  %c = iadd %a, %b\n  return %c\n}\n",
        )
        .unwrap();
        let r = run(&m, "f", &[], &ExecOptions::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Return(Some(Scalar::i64(5))));
        assert_eq!(r.metrics.insts_executed, 4);
    }

    const LOOP: &str = "\
memory 16
data 0 0500000000000000 bound
func @count(%n: i64) -> i64 {
block ^entry:
  %zero = const.i64 0
  %one = const.i64 1
  %eight = const.i64 8
  br ^head(%zero)
block ^head(%i: i64):
  %lim = load.64 %zero
  %c = icmp.lt_u %i, %lim
  br_if %c, ^body, ^exit
block ^body:
  print.i64 %i
  store.64 %eight, %i
  %next = iadd %i, %one
  br ^head(%next)
block ^exit:
  return %i
}
";

    #[test]
    fn loop_metrics_and_memory() {
        let m = parse_module(LOOP).unwrap();
        let opts = ExecOptions::default().with_watch(WatchRange::new("bound", 0, 8));
        let r = run(&m, "count", &[0], &opts).unwrap();
        assert_eq!(r.outcome.return_bits(), Some(5));
        assert_eq!(r.metrics.prints, vec![0, 1, 2, 3, 4]);
        assert_eq!(r.metrics.loads, 6);
        assert_eq!(r.metrics.loads_in_range["bound"], 6);
        assert_eq!(r.metrics.stores, 5);
        assert_eq!(r.metrics.branches, 6);
        assert_eq!(r.final_memory[8], 4);
    }

    #[test]
    fn fuel_exhaustion_traps() {
        let m = parse_module(LOOP).unwrap();
        let r = run(&m, "count", &[0], &ExecOptions::default().with_fuel(10)).unwrap();
        assert_eq!(r.outcome, Outcome::Trap("out of fuel".into()));
    }

    #[test]
    fn out_of_bounds_traps() {
        let m = parse_module(
            "memory 4\nfunc @f() -> i64 {\nblock ^e:\n  %a = const.i64 0\n  %v = load.64 %a\n  return %v\n}\n",
        )
        .unwrap();
        let r = run(&m, "f", &[], &ExecOptions::default()).unwrap();
        assert!(r.outcome.is_trap());
    }

    #[test]
    fn rejects_intrinsics() {
        let m = parse_module("func @f() {\nblock ^e:\n  intrinsic.flush\n  return\n}\n").unwrap();
        assert!(matches!(
            run(&m, "f", &[], &ExecOptions::default()),
            Err(ExecError::Intrinsic { .. })
        ));
    }

    #[test]
    fn calls_and_arg_count() {
        let m = parse_module(
            "\
func @double(%x: i64) -> i64 {
block ^e:
  %y = iadd %x, %x
  return %y
}
func @main(%x: i64) -> i64 {
block ^e:
  %y = call @double(%x)
  %z = call @double(%y)
  return %z
}
",
        )
        .unwrap();
        let r = run(&m, "main", &[3], &ExecOptions::default()).unwrap();
        assert_eq!(r.outcome.return_bits(), Some(12));
        assert!(matches!(
            run(&m, "main", &[], &ExecOptions::default()),
            Err(ExecError::ArgCount { .. })
        ));
    }
}
