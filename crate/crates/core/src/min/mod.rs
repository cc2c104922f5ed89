//! The Min register machine: bytecode format, assembler, the annotated
//! interpreter written in the IR, benchmark programs and a differential fuzzer.
//!
//! Min has 256 64-bit registers, an accumulator and a program counter counted
//! in words. Each instruction is an opcode word followed by its operand words.

mod bench;
mod fuzz;

use std::collections::BTreeMap;
use std::fmt;

use crate::ir::{parse_module, Function, Module, Segment};
use crate::specialize::{ArgMode, SpecializationRequest};

pub use bench::{bench, bench_module, BenchConfig, BenchError, BenchReport, BenchRow};
pub use fuzz::{
    case_seed, check_program, fuzz, generate_program, CaseConfig, Divergence, FuzzOptions,
    FuzzReport,
};

/// Address of the bytecode image in module memory.
pub const BYTECODE_BASE: u64 = 4096;
/// Address of the in-memory register file used by the plain variants.
pub const REGISTER_BASE: u64 = 256;
pub const REGISTER_COUNT: u64 = 256;
/// Segment label of the bytecode image.
pub const BYTECODE_LABEL: &str = "bytecode";

/// Source of the interpreter module: four interpreter variants plus `@run`.
pub const INTERPRETER_SOURCE: &str = include_str!("interp.ir");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MinOpcode {
    LoadImmediate = 0,
    LoadReg = 1,
    StoreReg = 2,
    Add = 3,
    Sub = 4,
    Mul = 5,
    Jmp = 6,
    Jmpnz = 7,
    Print = 8,
    Halt = 9,
}

impl MinOpcode {
    pub const ALL: [MinOpcode; 10] = [
        MinOpcode::LoadImmediate,
        MinOpcode::LoadReg,
        MinOpcode::StoreReg,
        MinOpcode::Add,
        MinOpcode::Sub,
        MinOpcode::Mul,
        MinOpcode::Jmp,
        MinOpcode::Jmpnz,
        MinOpcode::Print,
        MinOpcode::Halt,
    ];

    pub fn from_word(w: u64) -> Option<MinOpcode> {
        Self::ALL.get(usize::try_from(w).ok()?).copied()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            MinOpcode::LoadImmediate => "LOAD_IMMEDIATE",
            MinOpcode::LoadReg => "LOAD_REG",
            MinOpcode::StoreReg => "STORE_REG",
            MinOpcode::Add => "ADD",
            MinOpcode::Sub => "SUB",
            MinOpcode::Mul => "MUL",
            MinOpcode::Jmp => "JMP",
            MinOpcode::Jmpnz => "JMPNZ",
            MinOpcode::Print => "PRINT",
            MinOpcode::Halt => "HALT",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<MinOpcode> {
        Self::ALL
            .into_iter()
            .find(|op| op.mnemonic().eq_ignore_ascii_case(s))
    }

    pub fn operand_count(self) -> usize {
        match self {
            MinOpcode::Print | MinOpcode::Halt => 0,
            MinOpcode::Add | MinOpcode::Sub | MinOpcode::Mul => 2,
            _ => 1,
        }
    }

    fn register_operands(self) -> bool {
        matches!(
            self,
            MinOpcode::LoadReg
                | MinOpcode::StoreReg
                | MinOpcode::Add
                | MinOpcode::Sub
                | MinOpcode::Mul
        )
    }

    fn is_jump(self) -> bool {
        matches!(self, MinOpcode::Jmp | MinOpcode::Jmpnz)
    }
}

impl fmt::Display for MinOpcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// One decoded instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinInst {
    pub pc: u64,
    pub op: MinOpcode,
    pub operands: Vec<u64>,
}

/// An assembled program: its word image plus the assembler's label table.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MinProgram {
    pub words: Vec<u64>,
    pub labels: BTreeMap<String, u64>,
}

impl MinProgram {
    pub fn from_words(words: Vec<u64>) -> MinProgram {
        MinProgram {
            words,
            labels: BTreeMap::new(),
        }
    }

    /// Little-endian byte image.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn byte_len(&self) -> u64 {
        self.words.len() as u64 * 8
    }

    /// Decodes instructions in order, stopping at the first undecodable word.
    pub fn instructions(&self) -> Vec<MinInst> {
        let mut out = Vec::new();
        let mut pc = 0usize;
        while pc < self.words.len() {
            let Some(op) = MinOpcode::from_word(self.words[pc]) else {
                break;
            };
            let n = op.operand_count();
            if pc + n >= self.words.len() {
                break;
            }
            out.push(MinInst {
                pc: pc as u64,
                op,
                operands: self.words[pc + 1..pc + 1 + n].to_vec(),
            });
            pc += 1 + n;
        }
        out
    }

    /// Renders the program as assembly; jump targets get `L<pc>` labels.
    pub fn disassemble(&self) -> String {
        let insts = self.instructions();
        let targets: std::collections::BTreeSet<u64> = insts
            .iter()
            .filter(|i| i.op.is_jump())
            .map(|i| i.operands[0])
            .collect();
        let mut out = String::new();
        for i in &insts {
            if targets.contains(&i.pc) {
                out.push_str(&format!("L{}:\n", i.pc));
            }
            out.push_str("        ");
            out.push_str(i.op.mnemonic());
            for &o in &i.operands {
                if i.op.is_jump() {
                    out.push_str(&format!(" L{}", o));
                } else {
                    out.push_str(&format!(" {}", o));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct AsmError {
    pub line: usize,
    pub message: String,
}

fn parse_word(s: &str) -> Option<u64> {
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else {
        s.parse().ok()
    }
}

fn is_label(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Assembles Min assembly text: one instruction per line, `name:` label
/// definitions (optionally followed by an instruction), `;` comments.
///
/// Jump targets may be labels or absolute word indices. The result is linted:
/// register operands must be below 256, jump targets must be instruction
/// boundaries, and the last instruction must be `HALT` or `JMP` so execution
/// cannot run off the end.
pub fn assemble(text: &str) -> Result<MinProgram, AsmError> {
    enum Operand {
        Word(u64),
        Label(String),
    }
    let err = |line: usize, message: String| AsmError { line, message };
    let mut labels = BTreeMap::new();
    let mut pending: Vec<(usize, MinOpcode, Vec<Operand>)> = Vec::new();
    let mut pc = 0u64;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut line = raw.split(';').next().unwrap_or("").trim();
        while let Some((head, rest)) = line.split_once(':') {
            let name = head.trim();
            if !is_label(name) {
                return Err(err(line_no, format!("invalid label '{}'", name)));
            }
            if labels.insert(name.to_string(), pc).is_some() {
                return Err(err(line_no, format!("duplicate label '{}'", name)));
            }
            line = rest.trim();
        }
        let mut toks = line.split_whitespace();
        let Some(mn) = toks.next() else { continue };
        let op = MinOpcode::from_mnemonic(mn)
            .ok_or_else(|| err(line_no, format!("unknown mnemonic '{}'", mn)))?;
        let mut operands = Vec::new();
        for t in toks {
            let t = t.trim_end_matches(',');
            if let Some(w) = parse_word(t) {
                operands.push(Operand::Word(w));
            } else if op.is_jump() && is_label(t) {
                operands.push(Operand::Label(t.to_string()));
            } else {
                return Err(err(line_no, format!("invalid operand '{}'", t)));
            }
        }
        if operands.len() != op.operand_count() {
            return Err(err(
                line_no,
                format!(
                    "{} takes {} operand(s), found {}",
                    op,
                    op.operand_count(),
                    operands.len()
                ),
            ));
        }
        pc += 1 + operands.len() as u64;
        pending.push((line_no, op, operands));
    }

    let Some(&(last_line, last_op, _)) = pending.last() else {
        return Err(err(1, "empty program".into()));
    };
    if !matches!(last_op, MinOpcode::Halt | MinOpcode::Jmp) {
        return Err(err(
            last_line,
            format!(
                "program ends with {}; execution would run off the end",
                last_op
            ),
        ));
    }

    let mut boundaries = std::collections::HashSet::new();
    let mut at = 0u64;
    for (_, op, _) in &pending {
        boundaries.insert(at);
        at += 1 + op.operand_count() as u64;
    }

    let mut words = Vec::with_capacity(pc as usize);
    for (line_no, op, operands) in pending {
        words.push(op as u64);
        for o in operands {
            let w = match o {
                Operand::Word(w) => w,
                Operand::Label(l) => *labels
                    .get(&l)
                    .ok_or_else(|| err(line_no, format!("undefined label '{}'", l)))?,
            };
            if op.register_operands() && w >= REGISTER_COUNT {
                return Err(err(line_no, format!("register {} out of range", w)));
            }
            if op.is_jump() && !boundaries.contains(&w) {
                return Err(err(
                    line_no,
                    format!("jump target {} is not an instruction boundary", w),
                ));
            }
            words.push(w);
        }
    }
    Ok(MinProgram { words, labels })
}

/// Interpreter variants shipped in [`INTERPRETER_SOURCE`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Registers in memory, JMPNZ with two backedges.
    Plain,
    /// Registers through register intrinsics.
    State,
    /// `Plain` with JMPNZ via `specialized_value`.
    PlainSv,
    /// `State` with JMPNZ via `specialized_value`.
    StateSv,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Plain,
        Variant::State,
        Variant::PlainSv,
        Variant::StateSv,
    ];

    pub fn function_name(self) -> &'static str {
        match self {
            Variant::Plain => "min_plain",
            Variant::State => "min_state",
            Variant::PlainSv => "min_plain_sv",
            Variant::StateSv => "min_state_sv",
        }
    }
}

/// Parses the shipped interpreter module (no memory attached).
pub fn interpreter_module() -> Module {
    parse_module(INTERPRETER_SOURCE).expect("shipped interpreter parses")
}

pub fn build_min_interpreter(variant: Variant) -> Function {
    interpreter_module()
        .function(variant.function_name())
        .expect("variant present")
        .clone()
}

/// Copies `m` and places `p` at [`BYTECODE_BASE`], replacing any previous
/// bytecode segment and sizing memory to end right after the bytecode.
pub fn attach_program(m: &Module, p: &MinProgram) -> Module {
    let mut out = m.clone();
    out.memory
        .segments
        .retain(|s| s.label.as_deref() != Some(BYTECODE_LABEL));
    out.memory.segments.push(Segment {
        offset: BYTECODE_BASE,
        bytes: p.to_bytes(),
        label: Some(BYTECODE_LABEL.to_string()),
    });
    out.memory.size = out.memory.size.max(BYTECODE_BASE + p.byte_len());
    out
}

/// The interpreter module with `p` attached.
pub fn build_min_module(p: &MinProgram) -> Module {
    attach_program(&interpreter_module(), p)
}

/// Request specializing `variant` on `p`'s bytecode with a run-time input.
pub fn min_request(variant: Variant, p: &MinProgram, output: &str) -> SpecializationRequest {
    SpecializationRequest::new(
        variant.function_name(),
        output,
        vec![
            ArgMode::Memory {
                addr: BYTECODE_BASE,
                len: p.byte_len(),
            },
            ArgMode::RunTime,
        ],
    )
}

/// Interpreter arguments for running `p` attached at the base address.
pub fn interpreter_args(input: u64) -> [u64; 2] {
    [BYTECODE_BASE, input]
}

/// Assembly source of a program summing `1..=n`.
pub fn sum_program(n: u64) -> String {
    include_str!("programs/sum.min")
        .replace("LOAD_IMMEDIATE 1000", &format!("LOAD_IMMEDIATE {}", n))
}

/// Benchmark suite: `(name, assembly source)`.
pub const SUITE: [(&str, &str); 8] = [
    ("sum", include_str!("programs/sum.min")),
    ("nested", include_str!("programs/nested.min")),
    ("regpressure", include_str!("programs/regpressure.min")),
    ("fib", include_str!("programs/fib.min")),
    ("factorial", include_str!("programs/factorial.min")),
    ("countdown", include_str!("programs/countdown.min")),
    ("switch4", include_str!("programs/switch4.min")),
    ("add", include_str!("programs/add.min")),
];

/// The assembled suite.
pub fn suite() -> Vec<(&'static str, MinProgram)> {
    SUITE
        .iter()
        .map(|&(name, src)| (name, assemble(src).expect("suite program assembles")))
        .collect()
}
