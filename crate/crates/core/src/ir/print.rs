use std::fmt::Write;

use super::{BlockCall, Function, Module, Opcode, Terminator};

/// Canonical textual form. `parse_module(&print_module(m))` reproduces `m`.
pub fn print_module(m: &Module) -> String {
    let mut out = String::new();
    writeln!(out, "memory {}", m.memory.size).unwrap();
    for seg in &m.memory.segments {
        write!(out, "data {} ", seg.offset).unwrap();
        if seg.bytes.is_empty() {
            out.push_str("\"\"");
        }
        for b in &seg.bytes {
            write!(out, "{:02x}", b).unwrap();
        }
        if let Some(label) = &seg.label {
            write!(out, " {}", label).unwrap();
        }
        out.push('\n');
    }
    if let Some(entry) = &m.entry {
        writeln!(out, "entry @{}", entry).unwrap();
    }
    for f in &m.functions {
        out.push('\n');
        out.push_str(&print_function(f));
    }
    out
}

pub fn print_function(f: &Function) -> String {
    let mut out = String::new();
    let name = |v: super::Value| format!("%{}", f.value_name(v));
    write!(out, "func @{}(", f.name).unwrap();
    for (i, &p) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "{}: {}", name(p), f.value_type(p)).unwrap();
    }
    out.push(')');
    if let Some(ty) = f.result {
        write!(out, " -> {}", ty).unwrap();
    }
    out.push_str(" {\n");
    let call = |c: &BlockCall| {
        let mut s = format!("^{}", f.block(c.block).label);
        if !c.args.is_empty() {
            s.push('(');
            s.push_str(
                &c.args
                    .iter()
                    .map(|&a| name(a))
                    .collect::<Vec<_>>()
                    .join(", "),
            );
            s.push(')');
        }
        s
    };
    for block in &f.blocks {
        write!(out, "block ^{}", block.label).unwrap();
        if !block.params.is_empty() {
            out.push('(');
            for (i, &p) in block.params.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write!(out, "{}: {}", name(p), f.value_type(p)).unwrap();
            }
            out.push(')');
        }
        out.push_str(":\n");
        for inst in &block.insts {
            out.push_str("  ");
            if let Some(r) = inst.result {
                write!(out, "{} = ", name(r)).unwrap();
            }
            out.push_str(&inst.op.mnemonic());
            let args = inst
                .args
                .iter()
                .map(|&a| name(a))
                .collect::<Vec<_>>()
                .join(", ");
            match &inst.op {
                Opcode::Const(s) => write!(out, " {}", s.bits).unwrap(),
                Opcode::Call(callee) => write!(out, " @{}({})", callee, args).unwrap(),
                _ if !args.is_empty() => write!(out, " {}", args).unwrap(),
                _ => {}
            }
            out.push('\n');
        }
        out.push_str("  ");
        match &block.term {
            Terminator::Br(c) => write!(out, "br {}", call(c)).unwrap(),
            Terminator::BrIf {
                cond,
                then_dest,
                else_dest,
            } => write!(
                out,
                "br_if {}, {}, {}",
                name(*cond),
                call(then_dest),
                call(else_dest)
            )
            .unwrap(),
            Terminator::BrTable {
                selector,
                targets,
                default,
            } => write!(
                out,
                "br_table {}, [{}], {}",
                name(*selector),
                targets.iter().map(call).collect::<Vec<_>>().join(", "),
                call(default)
            )
            .unwrap(),
            Terminator::Return(Some(v)) => write!(out, "return {}", name(*v)).unwrap(),
            Terminator::Return(None) => out.push_str("return"),
            Terminator::Trap(msg) => write!(out, "trap {:?}", msg).unwrap(),
        }
        out.push('\n');
    }
    out.push_str("}\n");
    out
}
