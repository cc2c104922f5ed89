//! Parser for the line-oriented textual IR.
//!
//! Values may be referenced before their textual definition (blocks can be
//! listed in any order), so parsing happens in two phases: lines are first
//! read into an unresolved form, then names are bound and result types
//! inferred.

use std::collections::HashMap;
use std::fmt;

use super::{
    BinaryOp, Block, BlockCall, BlockData, CmpOp, Function, Inst, Intrinsic, MemWidth, MemoryImage,
    Module, Opcode, Scalar, ScalarType, Segment, Terminator, Value, ValueData,
};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Pos {
    line: usize,
    col: usize,
}

impl Pos {
    fn err(self, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            col: self.col,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    ValueRef(String),
    BlockRef(String),
    FuncRef(String),
    Str(String),
    Punct(char),
    Arrow,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "'{}'", w),
            Tok::ValueRef(v) => write!(f, "'%{}'", v),
            Tok::BlockRef(b) => write!(f, "'^{}'", b),
            Tok::FuncRef(n) => write!(f, "'@{}'", n),
            Tok::Str(s) => write!(f, "{:?}", s),
            Tok::Punct(c) => write!(f, "'{}'", c),
            Tok::Arrow => f.write_str("'->'"),
        }
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$'
}

fn lex_line(line: &str, lineno: usize) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos {
            line: lineno,
            col: i + 1,
        };
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == ';' || c == '#' {
            break;
        }
        let take_name = |start: usize| -> (String, usize) {
            let mut j = start;
            while j < chars.len() && is_name_char(chars[j]) {
                j += 1;
            }
            (chars[start..j].iter().collect(), j)
        };
        match c {
            '%' | '^' | '@' => {
                let (name, j) = take_name(i + 1);
                if name.is_empty() {
                    return Err(pos.err(format!("expected a name after '{}'", c)));
                }
                toks.push((
                    match c {
                        '%' => Tok::ValueRef(name),
                        '^' => Tok::BlockRef(name),
                        _ => Tok::FuncRef(name),
                    },
                    pos,
                ));
                i = j;
            }
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None => return Err(pos.err("unterminated string literal")),
                        Some('"') => break,
                        Some('\\') => {
                            let esc = chars
                                .get(j + 1)
                                .ok_or_else(|| pos.err("unterminated escape"))?;
                            match esc {
                                'n' => s.push('\n'),
                                't' => s.push('\t'),
                                'r' => s.push('\r'),
                                '0' => s.push('\0'),
                                '\\' => s.push('\\'),
                                '"' => s.push('"'),
                                '\'' => s.push('\''),
                                'u' => {
                                    let close = chars[j..]
                                        .iter()
                                        .position(|&c| c == '}')
                                        .ok_or_else(|| pos.err("bad unicode escape"))?;
                                    let hex: String = chars[j + 3..j + close].iter().collect();
                                    let ch = u32::from_str_radix(&hex, 16)
                                        .ok()
                                        .and_then(char::from_u32)
                                        .ok_or_else(|| pos.err("bad unicode escape"))?;
                                    s.push(ch);
                                    j += close - 1;
                                }
                                other => {
                                    return Err(pos.err(format!("unknown escape '\\{}'", other)))
                                }
                            }
                            j += 2;
                            continue;
                        }
                        Some(&ch) => s.push(ch),
                    }
                    j += 1;
                }
                toks.push((Tok::Str(s), pos));
                i = j + 1;
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                toks.push((Tok::Arrow, pos));
                i += 2;
            }
            '(' | ')' | '[' | ']' | ',' | ':' | '=' | '{' | '}' => {
                toks.push((Tok::Punct(c), pos));
                i += 1;
            }
            '-' => {
                let (name, j) = take_name(i + 1);
                toks.push((Tok::Word(format!("-{}", name)), pos));
                i = j;
            }
            _ if is_name_char(c) => {
                let (name, j) = take_name(i);
                toks.push((Tok::Word(name), pos));
                i = j;
            }
            _ => return Err(pos.err(format!("unexpected character '{}'", c))),
        }
    }
    Ok(toks)
}

/// Cursor over one line's tokens.
struct Line {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    end: Pos,
}

impl Line {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.at).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn next(&mut self) -> Result<(Tok, Pos), ParseError> {
        let t = self
            .toks
            .get(self.at)
            .cloned()
            .ok_or_else(|| self.end.err("unexpected end of line"))?;
        self.at += 1;
        Ok(t)
    }

    fn done(&self) -> bool {
        self.at >= self.toks.len()
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.toks.get(self.at) {
            None => Ok(()),
            Some((t, p)) => Err(p.err(format!("unexpected trailing token {}", t))),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        let (t, p) = self.next()?;
        if t == Tok::Punct(c) {
            Ok(())
        } else {
            Err(p.err(format!("expected '{}', found {}", c, t)))
        }
    }

    fn word(&mut self) -> Result<(String, Pos), ParseError> {
        match self.next()? {
            (Tok::Word(w), p) => Ok((w, p)),
            (t, p) => Err(p.err(format!("expected a word, found {}", t))),
        }
    }

    fn value_ref(&mut self) -> Result<(String, Pos), ParseError> {
        match self.next()? {
            (Tok::ValueRef(v), p) => Ok((v, p)),
            (t, p) => Err(p.err(format!("expected a value, found {}", t))),
        }
    }

    fn func_ref(&mut self) -> Result<(String, Pos), ParseError> {
        match self.next()? {
            (Tok::FuncRef(v), p) => Ok((v, p)),
            (t, p) => Err(p.err(format!("expected a function name, found {}", t))),
        }
    }

    fn int(&mut self) -> Result<u64, ParseError> {
        let (w, p) = self.word()?;
        parse_int(&w).ok_or_else(|| p.err(format!("invalid integer '{}'", w)))
    }

    fn scalar_type(&mut self) -> Result<ScalarType, ParseError> {
        let (w, p) = self.word()?;
        parse_type(&w).ok_or_else(|| p.err(format!("unknown type '{}'", w)))
    }

    fn typed_list(&mut self) -> Result<Vec<(String, ScalarType, Pos)>, ParseError> {
        let mut out = Vec::new();
        if self.eat_punct(')') {
            return Ok(out);
        }
        loop {
            let (name, p) = self.value_ref()?;
            self.expect_punct(':')?;
            let ty = self.scalar_type()?;
            out.push((name, ty, p));
            if self.eat_punct(')') {
                return Ok(out);
            }
            self.expect_punct(',')?;
        }
    }

    fn value_list(&mut self, close: char) -> Result<Vec<(String, Pos)>, ParseError> {
        let mut out = Vec::new();
        if self.eat_punct(close) {
            return Ok(out);
        }
        loop {
            out.push(self.value_ref()?);
            if self.eat_punct(close) {
                return Ok(out);
            }
            self.expect_punct(',')?;
        }
    }

    fn block_call(&mut self) -> Result<RawCall, ParseError> {
        let (label, pos) = match self.next()? {
            (Tok::BlockRef(b), p) => (b, p),
            (t, p) => return Err(p.err(format!("expected a block label, found {}", t))),
        };
        let args = if self.eat_punct('(') {
            self.value_list(')')?
        } else {
            Vec::new()
        };
        Ok(RawCall { label, pos, args })
    }
}

fn parse_int(w: &str) -> Option<u64> {
    let (neg, digits) = match w.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, w),
    };
    let mag = if let Some(hex) = digits.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok()?
    } else {
        digits.parse::<u64>().ok()?
    };
    Some(if neg { mag.wrapping_neg() } else { mag })
}

fn parse_type(w: &str) -> Option<ScalarType> {
    match w {
        "i32" => Some(ScalarType::I32),
        "i64" => Some(ScalarType::I64),
        _ => None,
    }
}

fn parse_hex(w: &str) -> Option<Vec<u8>> {
    if !w.len().is_multiple_of(2) {
        return None;
    }
    (0..w.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&w[i..i + 2], 16).ok())
        .collect()
}

fn parse_opcode(w: &str) -> Option<Opcode> {
    Some(match w {
        "const.i64" => Opcode::Const(Scalar::i64(0)),
        "const.i32" => Opcode::Const(Scalar::i32(0)),
        "iadd" => Opcode::Binary(BinaryOp::Add),
        "isub" => Opcode::Binary(BinaryOp::Sub),
        "imul" => Opcode::Binary(BinaryOp::Mul),
        "iand" => Opcode::Binary(BinaryOp::And),
        "ior" => Opcode::Binary(BinaryOp::Or),
        "ixor" => Opcode::Binary(BinaryOp::Xor),
        "ishl" => Opcode::Binary(BinaryOp::Shl),
        "ishr_u" => Opcode::Binary(BinaryOp::ShrU),
        "icmp.eq" => Opcode::Icmp(CmpOp::Eq),
        "icmp.ne" => Opcode::Icmp(CmpOp::Ne),
        "icmp.lt_u" => Opcode::Icmp(CmpOp::LtU),
        "icmp.lt_s" => Opcode::Icmp(CmpOp::LtS),
        "select" => Opcode::Select,
        "zext" => Opcode::Zext,
        "trunc" => Opcode::Trunc,
        "load.8u" => Opcode::Load(MemWidth::W8),
        "load.32" => Opcode::Load(MemWidth::W32),
        "load.64" => Opcode::Load(MemWidth::W64),
        "store.8" => Opcode::Store(MemWidth::W8),
        "store.32" => Opcode::Store(MemWidth::W32),
        "store.64" => Opcode::Store(MemWidth::W64),
        "call" => Opcode::Call(String::new()),
        "print.i64" => Opcode::Print,
        _ => {
            let name = w.strip_prefix("intrinsic.")?;
            Opcode::Intrinsic(Intrinsic::from_name(name)?)
        }
    })
}

struct RawCall {
    label: String,
    pos: Pos,
    args: Vec<(String, Pos)>,
}

enum RawTerm {
    Br(RawCall),
    BrIf((String, Pos), RawCall, RawCall),
    BrTable((String, Pos), Vec<RawCall>, RawCall),
    Return(Option<(String, Pos)>),
    Trap(String),
}

struct RawInst {
    result: Option<(String, Pos)>,
    op: Opcode,
    args: Vec<(String, Pos)>,
}

struct RawBlock {
    label: String,
    pos: Pos,
    params: Vec<(String, ScalarType, Pos)>,
    insts: Vec<RawInst>,
    term: Option<RawTerm>,
}

struct RawFunc {
    name: String,
    pos: Pos,
    params: Vec<(String, ScalarType, Pos)>,
    result: Option<ScalarType>,
    blocks: Vec<RawBlock>,
}

pub fn parse_module(text: &str) -> Result<Module, ParseError> {
    let mut memory: Option<MemoryImage> = None;
    let mut segments = Vec::new();
    let mut entry = None;
    let mut funcs: Vec<RawFunc> = Vec::new();
    let mut current: Option<RawFunc> = None;
    let mut last_pos = Pos::default();

    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let toks = lex_line(raw_line, lineno)?;
        if toks.is_empty() {
            continue;
        }
        let mut line = Line {
            toks,
            at: 0,
            end: Pos {
                line: lineno,
                col: raw_line.chars().count() + 1,
            },
        };
        last_pos = line.end;

        if let Some(func) = current.as_mut() {
            if line.peek() == Some(&Tok::Punct('}')) {
                line.next()?;
                line.finish()?;
                let func = current.take().unwrap();
                if let Some(b) = func.blocks.last() {
                    if b.term.is_none() {
                        return Err(b.pos.err(format!("block ^{} has no terminator", b.label)));
                    }
                }
                funcs.push(func);
                continue;
            }
            if line.peek() == Some(&Tok::Word("block".into())) {
                if let Some(b) = func.blocks.last() {
                    if b.term.is_none() {
                        return Err(b.pos.err(format!("block ^{} has no terminator", b.label)));
                    }
                }
                line.next()?;
                let (label, pos) = match line.next()? {
                    (Tok::BlockRef(b), p) => (b, p),
                    (t, p) => return Err(p.err(format!("expected a block label, found {}", t))),
                };
                let params = if line.eat_punct('(') {
                    line.typed_list()?
                } else {
                    Vec::new()
                };
                line.expect_punct(':')?;
                line.finish()?;
                func.blocks.push(RawBlock {
                    label,
                    pos,
                    params,
                    insts: Vec::new(),
                    term: None,
                });
                continue;
            }
            let pos = line.pos();
            let block = func
                .blocks
                .last_mut()
                .ok_or_else(|| pos.err("instruction outside of a block"))?;
            if block.term.is_some() {
                return Err(pos.err(format!(
                    "instruction after the terminator of block ^{}",
                    block.label
                )));
            }
            parse_body_line(&mut line, block)?;
            continue;
        }

        let (kw, pos) = line.word()?;
        match kw.as_str() {
            "memory" => {
                if memory.is_some() {
                    return Err(pos.err("duplicate memory declaration"));
                }
                memory = Some(MemoryImage::new(line.int()?));
                line.finish()?;
            }
            "data" => {
                let offset = line.int()?;
                let bytes = match line.next()? {
                    (Tok::Str(s), _) if s.is_empty() => Vec::new(),
                    (Tok::Word(w), p) => {
                        parse_hex(&w).ok_or_else(|| p.err(format!("invalid hex bytes '{}'", w)))?
                    }
                    (t, p) => return Err(p.err(format!("expected hex bytes, found {}", t))),
                };
                let label = if line.done() {
                    None
                } else {
                    Some(line.word()?.0)
                };
                line.finish()?;
                segments.push(Segment {
                    offset,
                    bytes,
                    label,
                });
            }
            "entry" => {
                if entry.is_some() {
                    return Err(pos.err("duplicate entry declaration"));
                }
                entry = Some(line.func_ref()?.0);
                line.finish()?;
            }
            "func" => {
                let (name, npos) = line.func_ref()?;
                if funcs.iter().any(|f| f.name == name) {
                    return Err(npos.err(format!("duplicate definition of function @{}", name)));
                }
                line.expect_punct('(')?;
                let params = line.typed_list()?;
                let result = if line.peek() == Some(&Tok::Arrow) {
                    line.next()?;
                    Some(line.scalar_type()?)
                } else {
                    None
                };
                line.expect_punct('{')?;
                line.finish()?;
                current = Some(RawFunc {
                    name,
                    pos: npos,
                    params,
                    result,
                    blocks: Vec::new(),
                });
            }
            other => return Err(pos.err(format!("unexpected '{}' at top level", other))),
        }
    }
    if let Some(f) = current {
        return Err(last_pos.err(format!("function @{} is missing its closing '}}'", f.name)));
    }

    let signatures: HashMap<String, Option<ScalarType>> =
        funcs.iter().map(|f| (f.name.clone(), f.result)).collect();
    let functions = funcs
        .into_iter()
        .map(|f| resolve_function(f, &signatures))
        .collect::<Result<Vec<_>, _>>()?;
    let mut memory = memory.unwrap_or_default();
    memory.segments = segments;
    Ok(Module {
        functions,
        memory,
        entry,
    })
}

fn parse_body_line(line: &mut Line, block: &mut RawBlock) -> Result<(), ParseError> {
    let result = if let Some(Tok::ValueRef(_)) = line.peek() {
        let r = line.value_ref()?;
        line.expect_punct('=')?;
        Some(r)
    } else {
        None
    };
    let (word, wpos) = line.word()?;
    let term = match word.as_str() {
        "br" => Some(RawTerm::Br(line.block_call()?)),
        "br_if" => {
            let cond = line.value_ref()?;
            line.expect_punct(',')?;
            let t = line.block_call()?;
            line.expect_punct(',')?;
            let e = line.block_call()?;
            Some(RawTerm::BrIf(cond, t, e))
        }
        "br_table" => {
            let sel = line.value_ref()?;
            line.expect_punct(',')?;
            line.expect_punct('[')?;
            let mut targets = Vec::new();
            if !line.eat_punct(']') {
                loop {
                    targets.push(line.block_call()?);
                    if line.eat_punct(']') {
                        break;
                    }
                    line.expect_punct(',')?;
                }
            }
            line.expect_punct(',')?;
            let default = line.block_call()?;
            Some(RawTerm::BrTable(sel, targets, default))
        }
        "return" => Some(RawTerm::Return(if line.done() {
            None
        } else {
            Some(line.value_ref()?)
        })),
        "trap" => match line.next()? {
            (Tok::Str(s), _) => Some(RawTerm::Trap(s)),
            (t, p) => return Err(p.err(format!("expected a trap message, found {}", t))),
        },
        _ => None,
    };
    if let Some(term) = term {
        if result.is_some() {
            return Err(wpos.err(format!("terminator '{}' cannot define a value", word)));
        }
        line.finish()?;
        block.term = Some(term);
        return Ok(());
    }

    let mut op =
        parse_opcode(&word).ok_or_else(|| wpos.err(format!("unknown opcode '{}'", word)))?;
    let args = match &mut op {
        Opcode::Const(s) => {
            *s = Scalar::new(s.ty, line.int()?);
            Vec::new()
        }
        Opcode::Call(callee) => {
            *callee = line.func_ref()?.0;
            line.expect_punct('(')?;
            line.value_list(')')?
        }
        _ => {
            let mut args = Vec::new();
            while !line.done() {
                args.push(line.value_ref()?);
                if line.done() {
                    break;
                }
                line.expect_punct(',')?;
            }
            args
        }
    };
    line.finish()?;
    block.insts.push(RawInst { result, op, args });
    Ok(())
}

/// Result type of an opcode when it is determined without looking at operand
/// types. `Err(())` means the result has no value; `Ok(None)` means it
/// follows its operands.
fn fixed_result_type(
    op: &Opcode,
    signatures: &HashMap<String, Option<ScalarType>>,
) -> Result<Option<ScalarType>, ()> {
    Ok(Some(match op {
        Opcode::Const(s) => s.ty,
        Opcode::Icmp(_) | Opcode::Trunc => ScalarType::I32,
        Opcode::Zext => ScalarType::I64,
        Opcode::Load(w) => w.load_type(),
        Opcode::Store(_) | Opcode::Print => return Err(()),
        Opcode::Intrinsic(i) => {
            if i.has_result() {
                ScalarType::I64
            } else {
                return Err(());
            }
        }
        Opcode::Call(callee) => match signatures.get(callee) {
            Some(Some(ty)) => *ty,
            Some(None) => return Err(()),
            // Unknown callee: the validator reports it.
            None => ScalarType::I64,
        },
        Opcode::Binary(_) | Opcode::Select => return Ok(None),
    }))
}

fn resolve_function(
    raw: RawFunc,
    signatures: &HashMap<String, Option<ScalarType>>,
) -> Result<Function, ParseError> {
    let mut f = Function::new(raw.name.clone());
    f.result = raw.result;
    let mut names: HashMap<String, Value> = HashMap::new();
    let mut define = |f: &mut Function, name: &str, ty: ScalarType, pos: Pos| {
        if names.contains_key(name) {
            return Err(pos.err(format!("duplicate definition of value %{}", name)));
        }
        let v = f.add_value(name, ty);
        names.insert(name.to_string(), v);
        Ok(v)
    };

    for (name, ty, pos) in &raw.params {
        let v = define(&mut f, name, *ty, *pos)?;
        f.params.push(v);
    }

    let mut labels: HashMap<String, Block> = HashMap::new();
    for (i, b) in raw.blocks.iter().enumerate() {
        if labels.insert(b.label.clone(), Block(i as u32)).is_some() {
            return Err(b
                .pos
                .err(format!("duplicate definition of block ^{}", b.label)));
        }
    }
    if raw.blocks.is_empty() {
        return Err(raw.pos.err(format!("function @{} has no blocks", raw.name)));
    }

    // Phase 1: define every value. Results whose type follows their operands
    // start as i64 and are fixed up below.
    let mut pending_types: Vec<(Value, usize, usize)> = Vec::new();
    let mut block_params = Vec::new();
    let mut inst_results = Vec::new();
    for (bi, b) in raw.blocks.iter().enumerate() {
        let mut params = Vec::new();
        for (name, ty, pos) in &b.params {
            params.push(define(&mut f, name, *ty, *pos)?);
        }
        block_params.push(params);
        let mut results = Vec::new();
        for (ii, inst) in b.insts.iter().enumerate() {
            let fixed = fixed_result_type(&inst.op, signatures);
            let r = match (&inst.result, fixed) {
                (None, _) => None,
                (Some((name, pos)), Err(())) => {
                    return Err(pos.err(format!(
                        "'{}' does not produce a value, cannot bind %{}",
                        inst.op.mnemonic(),
                        name
                    )))
                }
                (Some((name, pos)), Ok(ty)) => {
                    let v = define(&mut f, name, ty.unwrap_or(ScalarType::I64), *pos)?;
                    if ty.is_none() {
                        pending_types.push((v, bi, ii));
                    }
                    Some(v)
                }
            };
            results.push(r);
        }
        inst_results.push(results);
    }

    let lookup = |name: &str, pos: Pos| {
        names
            .get(name)
            .copied()
            .ok_or_else(|| pos.err(format!("use of undefined value %{}", name)))
    };
    let lookup_block = |call: &RawCall| -> Result<BlockCall, ParseError> {
        let block = labels.get(&call.label).copied().ok_or_else(|| {
            call.pos
                .err(format!("branch to undefined block ^{}", call.label))
        })?;
        let args = call
            .args
            .iter()
            .map(|(n, p)| lookup(n, *p))
            .collect::<Result<_, _>>()?;
        Ok(BlockCall { block, args })
    };

    // Phase 2: bind operands.
    for (bi, b) in raw.blocks.into_iter().enumerate() {
        let mut insts = Vec::new();
        for (ii, inst) in b.insts.into_iter().enumerate() {
            let args = inst
                .args
                .iter()
                .map(|(n, p)| lookup(n, *p))
                .collect::<Result<Vec<_>, _>>()?;
            insts.push(Inst {
                result: inst_results[bi][ii],
                op: inst.op,
                args,
            });
        }
        let term = match b.term.expect("terminator checked during parsing") {
            RawTerm::Br(c) => Terminator::Br(lookup_block(&c)?),
            RawTerm::BrIf((c, p), t, e) => Terminator::BrIf {
                cond: lookup(&c, p)?,
                then_dest: lookup_block(&t)?,
                else_dest: lookup_block(&e)?,
            },
            RawTerm::BrTable((s, p), targets, default) => Terminator::BrTable {
                selector: lookup(&s, p)?,
                targets: targets
                    .iter()
                    .map(&lookup_block)
                    .collect::<Result<_, _>>()?,
                default: lookup_block(&default)?,
            },
            RawTerm::Return(v) => Terminator::Return(match v {
                Some((n, p)) => Some(lookup(&n, p)?),
                None => None,
            }),
            RawTerm::Trap(msg) => Terminator::Trap(msg),
        };
        f.blocks.push(BlockData {
            label: b.label,
            params: std::mem::take(&mut block_params[bi]),
            insts,
            term,
        });
    }

    // Phase 3: operand-typed results, to a fixpoint (operands may be defined
    // later in the text).
    let mut changed = true;
    while changed {
        changed = false;
        for &(v, bi, ii) in &pending_types {
            let inst = &f.blocks[bi].insts[ii];
            let src = match inst.op {
                Opcode::Select => inst.args.get(1),
                _ => inst.args.first(),
            };
            if let Some(&src) = src {
                let ty = f.value_type(src);
                let slot: &mut ValueData = &mut f.values[v.index()];
                if slot.ty != ty {
                    slot.ty = ty;
                    changed = true;
                }
            }
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_module() {
        let m = parse_module(
            "memory 0\nfunc @zero() -> i64 {\nblock ^entry:\n  %z = const.i64 0\n  return %z\n}\n",
        )
        .unwrap();
        assert_eq!(m.functions.len(), 1);
        assert_eq!(m.functions[0].blocks.len(), 1);
        assert_eq!(m.functions[0].result, Some(ScalarType::I64));
    }

    #[test]
    fn undefined_label_is_named() {
        let err = parse_module("func @f() {\nblock ^entry:\n  br ^nowhere\n}\n").unwrap_err();
        assert!(err.message.contains("^nowhere"), "{}", err);
        assert_eq!(err.line, 3);
    }

    #[test]
    fn unknown_opcode() {
        let err =
            parse_module("func @f() {\nblock ^e:\n  %x = frobnicate\n  return\n}\n").unwrap_err();
        assert!(err.message.contains("unknown opcode"), "{}", err);
    }

    #[test]
    fn duplicate_value() {
        let text = "func @f(%a: i64) {\nblock ^e:\n  %a = const.i64 1\n  return\n}\n";
        let err = parse_module(text).unwrap_err();
        assert!(err.message.contains("duplicate"), "{}", err);
    }

    #[test]
    fn forward_reference_types() {
        let text = "\
func @f(%n: i32) -> i32 {
block ^entry:
  br ^b
block ^c:
  %y = iadd %x, %x
  return %y
block ^b:
  %x = iadd %n, %n
  br ^c
}
";
        let m = parse_module(text).unwrap();
        let f = &m.functions[0];
        assert!(f.values.iter().all(|v| v.ty == ScalarType::I32));
    }

    #[test]
    fn negative_and_hex_immediates() {
        let text =
            "func @f() {\nblock ^e:\n  %a = const.i64 -1\n  %b = const.i32 0x10\n  return\n}\n";
        let m = parse_module(text).unwrap();
        let insts = &m.functions[0].blocks[0].insts;
        assert_eq!(insts[0].op, Opcode::Const(Scalar::i64(u64::MAX)));
        assert_eq!(insts[1].op, Opcode::Const(Scalar::i32(16)));
    }

    #[test]
    fn data_segments_with_labels() {
        let m = parse_module("memory 16\ndata 8 0102 code\ndata 0 \"\"\n").unwrap();
        assert_eq!(m.memory.segments[0].bytes, vec![1, 2]);
        assert_eq!(m.memory.segments[0].label.as_deref(), Some("code"));
        assert!(m.memory.segments[1].bytes.is_empty());
    }
}
