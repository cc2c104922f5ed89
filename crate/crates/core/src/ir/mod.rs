//! SSA control-flow-graph IR.
//!
//! A [`Module`] holds functions plus one little-endian linear memory image.
//! Functions are lists of basic blocks; joins pass values explicitly through
//! block parameters. The entry block is always the first block and takes no
//! parameters: function parameters are visible in every block.

mod cfg;
mod parse;
mod print;
mod validate;

use std::fmt;

pub use cfg::{Cfg, DomTree, Liveness};
pub use parse::{parse_module, ParseError};
pub use print::{print_function, print_module};
pub use validate::{validate, validate_function, Diagnostic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarType {
    I32,
    I64,
}

impl ScalarType {
    pub fn mask(self, bits: u64) -> u64 {
        match self {
            ScalarType::I32 => bits & 0xffff_ffff,
            ScalarType::I64 => bits,
        }
    }

    pub fn bit_width(self) -> u32 {
        match self {
            ScalarType::I32 => 32,
            ScalarType::I64 => 64,
        }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarType::I32 => "i32",
            ScalarType::I64 => "i64",
        })
    }
}

/// A typed concrete value. The payload is always kept masked to the type's
/// width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Scalar {
    pub ty: ScalarType,
    pub bits: u64,
}

impl Scalar {
    pub fn new(ty: ScalarType, bits: u64) -> Self {
        Scalar {
            ty,
            bits: ty.mask(bits),
        }
    }

    pub fn i64(bits: u64) -> Self {
        Scalar::new(ScalarType::I64, bits)
    }

    pub fn i32(bits: u64) -> Self {
        Scalar::new(ScalarType::I32, bits)
    }
}

/// SSA value, an index into [`Function::values`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(pub u32);

impl Value {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Basic block, an index into [`Function::blocks`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Block(pub u32);

impl Block {
    pub const ENTRY: Block = Block(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueData {
    pub name: String,
    pub ty: ScalarType,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    ShrU,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    LtU,
    LtS,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MemWidth {
    /// One byte; loads zero-extend to i64.
    W8,
    W32,
    W64,
}

impl MemWidth {
    pub fn bytes(self) -> u64 {
        match self {
            MemWidth::W8 => 1,
            MemWidth::W32 => 4,
            MemWidth::W64 => 8,
        }
    }

    /// Type produced by a load of this width.
    pub fn load_type(self) -> ScalarType {
        match self {
            MemWidth::W8 | MemWidth::W64 => ScalarType::I64,
            MemWidth::W32 => ScalarType::I32,
        }
    }
}

/// Calls recognized by the specializer. Outside of specialization they must
/// be polyfilled before execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Intrinsic {
    PushContext,
    UpdateContext,
    PopContext,
    AssertConst,
    SpecializedValue,
    LoadRegister,
    StoreRegister,
    LocalRead,
    LocalWrite,
    StackPush,
    StackPop,
    StackRead,
    StackWrite,
    Flush,
}

impl Intrinsic {
    pub const ALL: [Intrinsic; 14] = [
        Intrinsic::PushContext,
        Intrinsic::UpdateContext,
        Intrinsic::PopContext,
        Intrinsic::AssertConst,
        Intrinsic::SpecializedValue,
        Intrinsic::LoadRegister,
        Intrinsic::StoreRegister,
        Intrinsic::LocalRead,
        Intrinsic::LocalWrite,
        Intrinsic::StackPush,
        Intrinsic::StackPop,
        Intrinsic::StackRead,
        Intrinsic::StackWrite,
        Intrinsic::Flush,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::PushContext => "push_context",
            Intrinsic::UpdateContext => "update_context",
            Intrinsic::PopContext => "pop_context",
            Intrinsic::AssertConst => "assert_const",
            Intrinsic::SpecializedValue => "specialized_value",
            Intrinsic::LoadRegister => "load_register",
            Intrinsic::StoreRegister => "store_register",
            Intrinsic::LocalRead => "local_read",
            Intrinsic::LocalWrite => "local_write",
            Intrinsic::StackPush => "stack_push",
            Intrinsic::StackPop => "stack_pop",
            Intrinsic::StackRead => "stack_read",
            Intrinsic::StackWrite => "stack_write",
            Intrinsic::Flush => "flush",
        }
    }

    pub fn from_name(name: &str) -> Option<Intrinsic> {
        Intrinsic::ALL.iter().copied().find(|i| i.name() == name)
    }

    /// Number of i64 operands.
    pub fn arity(self) -> usize {
        match self {
            Intrinsic::PopContext | Intrinsic::Flush => 0,
            Intrinsic::PushContext
            | Intrinsic::UpdateContext
            | Intrinsic::AssertConst
            | Intrinsic::LoadRegister
            | Intrinsic::StackPop => 1,
            Intrinsic::StoreRegister
            | Intrinsic::LocalRead
            | Intrinsic::StackPush
            | Intrinsic::StackRead => 2,
            Intrinsic::SpecializedValue | Intrinsic::LocalWrite | Intrinsic::StackWrite => 3,
        }
    }

    pub fn has_result(self) -> bool {
        matches!(
            self,
            Intrinsic::SpecializedValue
                | Intrinsic::LoadRegister
                | Intrinsic::LocalRead
                | Intrinsic::StackPop
                | Intrinsic::StackRead
        )
    }

    /// Intrinsics that change the specialization context on outgoing edges.
    pub fn changes_context(self) -> bool {
        matches!(
            self,
            Intrinsic::PushContext
                | Intrinsic::UpdateContext
                | Intrinsic::PopContext
                | Intrinsic::SpecializedValue
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    Const(Scalar),
    Binary(BinaryOp),
    Icmp(CmpOp),
    /// `select cond, a, b`: `a` if `cond != 0`.
    Select,
    /// i32 -> i64.
    Zext,
    /// i64 -> i32.
    Trunc,
    Load(MemWidth),
    /// `store addr, value`.
    Store(MemWidth),
    Call(String),
    Intrinsic(Intrinsic),
    Print,
}

impl Opcode {
    /// True for opcodes whose result depends only on their operands.
    pub fn is_pure(&self) -> bool {
        matches!(
            self,
            Opcode::Const(_)
                | Opcode::Binary(_)
                | Opcode::Icmp(_)
                | Opcode::Select
                | Opcode::Zext
                | Opcode::Trunc
        )
    }

    /// Mnemonic as written in the textual form (without immediates).
    pub fn mnemonic(&self) -> String {
        match self {
            Opcode::Const(s) => format!("const.{}", s.ty),
            Opcode::Binary(op) => match op {
                BinaryOp::Add => "iadd",
                BinaryOp::Sub => "isub",
                BinaryOp::Mul => "imul",
                BinaryOp::And => "iand",
                BinaryOp::Or => "ior",
                BinaryOp::Xor => "ixor",
                BinaryOp::Shl => "ishl",
                BinaryOp::ShrU => "ishr_u",
            }
            .to_string(),
            Opcode::Icmp(op) => match op {
                CmpOp::Eq => "icmp.eq",
                CmpOp::Ne => "icmp.ne",
                CmpOp::LtU => "icmp.lt_u",
                CmpOp::LtS => "icmp.lt_s",
            }
            .to_string(),
            Opcode::Select => "select".to_string(),
            Opcode::Zext => "zext".to_string(),
            Opcode::Trunc => "trunc".to_string(),
            Opcode::Load(w) => match w {
                MemWidth::W8 => "load.8u",
                MemWidth::W32 => "load.32",
                MemWidth::W64 => "load.64",
            }
            .to_string(),
            Opcode::Store(w) => match w {
                MemWidth::W8 => "store.8",
                MemWidth::W32 => "store.32",
                MemWidth::W64 => "store.64",
            }
            .to_string(),
            Opcode::Call(_) => "call".to_string(),
            Opcode::Intrinsic(i) => format!("intrinsic.{}", i.name()),
            Opcode::Print => "print.i64".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inst {
    pub result: Option<Value>,
    pub op: Opcode,
    pub args: Vec<Value>,
}

/// A control-flow edge with its block arguments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockCall {
    pub block: Block,
    pub args: Vec<Value>,
}

impl BlockCall {
    pub fn new(block: Block, args: Vec<Value>) -> Self {
        BlockCall { block, args }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Terminator {
    Br(BlockCall),
    /// Taken when `cond != 0`.
    BrIf {
        cond: Value,
        then_dest: BlockCall,
        else_dest: BlockCall,
    },
    /// Out-of-range selectors (compared unsigned) go to `default`.
    BrTable {
        selector: Value,
        targets: Vec<BlockCall>,
        default: BlockCall,
    },
    Return(Option<Value>),
    Trap(String),
}

impl Terminator {
    pub fn edges(&self) -> Vec<&BlockCall> {
        match self {
            Terminator::Br(c) => vec![c],
            Terminator::BrIf {
                then_dest,
                else_dest,
                ..
            } => vec![then_dest, else_dest],
            Terminator::BrTable {
                targets, default, ..
            } => targets.iter().chain(std::iter::once(default)).collect(),
            Terminator::Return(_) | Terminator::Trap(_) => vec![],
        }
    }

    pub fn edges_mut(&mut self) -> Vec<&mut BlockCall> {
        match self {
            Terminator::Br(c) => vec![c],
            Terminator::BrIf {
                then_dest,
                else_dest,
                ..
            } => vec![then_dest, else_dest],
            Terminator::BrTable {
                targets, default, ..
            } => targets.iter_mut().chain(std::iter::once(default)).collect(),
            Terminator::Return(_) | Terminator::Trap(_) => vec![],
        }
    }

    pub fn successors(&self) -> impl Iterator<Item = Block> + '_ {
        self.edges().into_iter().map(|c| c.block)
    }

    /// Values read by the terminator itself, excluding edge arguments.
    pub fn operands(&self) -> Vec<Value> {
        match self {
            Terminator::BrIf { cond, .. } => vec![*cond],
            Terminator::BrTable { selector, .. } => vec![*selector],
            Terminator::Return(Some(v)) => vec![*v],
            _ => vec![],
        }
    }

    pub fn for_each_use_mut(&mut self, mut f: impl FnMut(&mut Value)) {
        match self {
            Terminator::BrIf { cond, .. } => f(cond),
            Terminator::BrTable { selector, .. } => f(selector),
            Terminator::Return(Some(v)) => f(v),
            _ => {}
        }
        for edge in self.edges_mut() {
            edge.args.iter_mut().for_each(&mut f);
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Terminator::Br(_) => "br",
            Terminator::BrIf { .. } => "br_if",
            Terminator::BrTable { .. } => "br_table",
            Terminator::Return(_) => "return",
            Terminator::Trap(_) => "trap",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockData {
    pub label: String,
    pub params: Vec<Value>,
    pub insts: Vec<Inst>,
    pub term: Terminator,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Value>,
    pub result: Option<ScalarType>,
    pub blocks: Vec<BlockData>,
    pub values: Vec<ValueData>,
}

impl Function {
    pub fn new(name: impl Into<String>) -> Self {
        Function {
            name: name.into(),
            params: Vec::new(),
            result: None,
            blocks: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn entry(&self) -> Block {
        Block::ENTRY
    }

    pub fn block(&self, b: Block) -> &BlockData {
        &self.blocks[b.index()]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut BlockData {
        &mut self.blocks[b.index()]
    }

    pub fn block_ids(&self) -> impl Iterator<Item = Block> {
        (0..self.blocks.len() as u32).map(Block)
    }

    pub fn value_type(&self, v: Value) -> ScalarType {
        self.values[v.index()].ty
    }

    pub fn value_name(&self, v: Value) -> &str {
        &self.values[v.index()].name
    }

    /// Adds a value with exactly this name. Callers are responsible for
    /// uniqueness; see [`NameAllocator`] for transforms.
    pub fn add_value(&mut self, name: impl Into<String>, ty: ScalarType) -> Value {
        let v = Value(self.values.len() as u32);
        self.values.push(ValueData {
            name: name.into(),
            ty,
        });
        v
    }

    pub fn add_block(&mut self, label: impl Into<String>) -> Block {
        let b = Block(self.blocks.len() as u32);
        self.blocks.push(BlockData {
            label: label.into(),
            params: Vec::new(),
            insts: Vec::new(),
            term: Terminator::Trap("unterminated block".into()),
        });
        b
    }

    pub fn block_by_label(&self, label: &str) -> Option<Block> {
        self.block_ids().find(|&b| self.block(b).label == label)
    }

    /// Number of block parameters summed over all blocks.
    pub fn block_param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.params.len()).sum()
    }

    pub fn inst_count(&self) -> usize {
        self.blocks.iter().map(|b| b.insts.len()).sum()
    }

    pub fn uses_intrinsics(&self) -> bool {
        self.blocks
            .iter()
            .flat_map(|b| &b.insts)
            .any(|i| matches!(i.op, Opcode::Intrinsic(_)))
    }

    /// Rewrites every use (instruction operand, terminator operand, edge
    /// argument) through `map`.
    pub fn rewrite_uses(&mut self, mut map: impl FnMut(Value) -> Value) {
        for block in &mut self.blocks {
            for inst in &mut block.insts {
                for a in &mut inst.args {
                    *a = map(*a);
                }
            }
            block.term.for_each_use_mut(|v| *v = map(*v));
        }
    }
}

/// Hands out value names that do not collide with names already present in a
/// function.
#[derive(Debug, Default)]
pub struct NameAllocator {
    used: std::collections::HashSet<String>,
    counter: u64,
}

impl NameAllocator {
    pub fn for_function(f: &Function) -> Self {
        NameAllocator {
            used: f.values.iter().map(|v| v.name.clone()).collect(),
            counter: 0,
        }
    }

    pub fn fresh(&mut self, hint: &str) -> String {
        if !hint.is_empty() && self.used.insert(hint.to_string()) {
            return hint.to_string();
        }
        loop {
            self.counter += 1;
            let candidate = if hint.is_empty() {
                format!("v{}", self.counter)
            } else {
                format!("{}.{}", hint, self.counter)
            };
            if self.used.insert(candidate.clone()) {
                return candidate;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub offset: u64,
    pub bytes: Vec<u8>,
    /// Optional name, usable as a watch-range label.
    pub label: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MemoryImage {
    pub size: u64,
    pub segments: Vec<Segment>,
}

impl MemoryImage {
    pub fn new(size: u64) -> Self {
        MemoryImage {
            size,
            segments: Vec::new(),
        }
    }

    /// Materializes the full byte array. Assumes in-bounds segments.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut mem = vec![0u8; self.size as usize];
        for seg in &self.segments {
            let start = seg.offset as usize;
            mem[start..start + seg.bytes.len()].copy_from_slice(&seg.bytes);
        }
        mem
    }

    /// Reads `width` bytes little-endian at `addr`, or `None` if any byte is
    /// out of bounds. Bytes outside every segment read as zero.
    pub fn read(&self, addr: u64, width: MemWidth) -> Option<u64> {
        let n = width.bytes();
        let end = addr.checked_add(n)?;
        if end > self.size {
            return None;
        }
        let mut out = 0u64;
        for i in 0..n {
            let a = addr + i;
            let byte = self
                .segments
                .iter()
                .find(|s| a >= s.offset && a < s.offset + s.bytes.len() as u64)
                .map(|s| s.bytes[(a - s.offset) as usize])
                .unwrap_or(0);
            out |= (byte as u64) << (8 * i);
        }
        Some(out)
    }

    pub fn segment_by_label(&self, label: &str) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|s| s.label.as_deref() == Some(label))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Module {
    pub functions: Vec<Function>,
    pub memory: MemoryImage,
    pub entry: Option<String>,
}

impl Module {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut Function> {
        self.functions.iter_mut().find(|f| f.name == name)
    }
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_module(self))
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_function(self))
    }
}
