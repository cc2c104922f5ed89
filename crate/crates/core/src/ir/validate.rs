use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{
    Block, Cfg, DomTree, Function, Intrinsic, MemWidth, Module, Opcode, ScalarType, Terminator,
    Value,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: Option<String>,
    pub block: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.function, &self.block) {
            (Some(func), Some(b)) => write!(f, "@{} ^{}: {}", func, b, self.message),
            (Some(func), None) => write!(f, "@{}: {}", func, self.message),
            _ => f.write_str(&self.message),
        }
    }
}

/// Checks every structural invariant of a module. An empty result means the
/// module is well formed.
pub fn validate(m: &Module) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let module_diag = |msg: String| Diagnostic {
        function: None,
        block: None,
        message: msg,
    };

    let mut seen = HashSet::new();
    for f in &m.functions {
        if !seen.insert(f.name.as_str()) {
            out.push(module_diag(format!("duplicate function @{}", f.name)));
        }
    }
    if let Some(entry) = &m.entry {
        if m.function(entry).is_none() {
            out.push(module_diag(format!(
                "entry function @{} does not exist",
                entry
            )));
        }
    }

    let mut segs: Vec<_> = m.memory.segments.iter().collect();
    segs.sort_by_key(|s| s.offset);
    for s in &segs {
        let end = s.offset.checked_add(s.bytes.len() as u64);
        if end.is_none_or(|e| e > m.memory.size) {
            out.push(module_diag(format!(
                "data segment at {} ({} bytes) exceeds memory size {}",
                s.offset,
                s.bytes.len(),
                m.memory.size
            )));
        }
    }
    for w in segs.windows(2) {
        if w[0].offset.saturating_add(w[0].bytes.len() as u64) > w[1].offset {
            out.push(module_diag(format!(
                "data segments at {} and {} overlap",
                w[0].offset, w[1].offset
            )));
        }
    }
    let mut labels = HashSet::new();
    for s in &m.memory.segments {
        if let Some(l) = &s.label {
            if !labels.insert(l.as_str()) {
                out.push(module_diag(format!("duplicate data label '{}'", l)));
            }
        }
    }

    let sigs: HashMap<&str, &Function> = m.functions.iter().map(|f| (f.name.as_str(), f)).collect();
    for f in &m.functions {
        check_function(f, Some(&sigs), &mut out);
    }
    out
}

/// Validates one function in isolation. Call targets are not resolved.
pub fn validate_function(f: &Function) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    check_function(f, None, &mut out);
    out
}

struct Checker<'a> {
    f: &'a Function,
    out: &'a mut Vec<Diagnostic>,
}

impl Checker<'_> {
    fn err(&mut self, block: Option<Block>, message: String) {
        self.out.push(Diagnostic {
            function: Some(self.f.name.clone()),
            block: block.map(|b| self.f.block(b).label.clone()),
            message,
        });
    }

    fn ty(&self, v: Value) -> Option<ScalarType> {
        self.f.values.get(v.index()).map(|d| d.ty)
    }

    fn name(&self, v: Value) -> String {
        self.f
            .values
            .get(v.index())
            .map(|d| format!("%{}", d.name))
            .unwrap_or_else(|| format!("<invalid value {}>", v.0))
    }
}

fn check_function(
    f: &Function,
    sigs: Option<&HashMap<&str, &Function>>,
    out: &mut Vec<Diagnostic>,
) {
    let mut c = Checker { f, out };
    if f.blocks.is_empty() {
        c.err(None, "function has no blocks".into());
        return;
    }
    if !f.block(Block::ENTRY).params.is_empty() {
        c.err(
            Some(Block::ENTRY),
            "entry block must not have parameters".into(),
        );
    }

    let mut names = HashSet::new();
    for v in &f.values {
        if !names.insert(v.name.as_str()) {
            c.err(None, format!("duplicate value name %{}", v.name));
        }
    }
    let mut block_labels = HashSet::new();
    for b in &f.blocks {
        if !block_labels.insert(b.label.as_str()) {
            c.err(None, format!("duplicate block label ^{}", b.label));
        }
    }

    // Definition sites. `None` position means "at block entry".
    let mut def_site: Vec<Option<(Block, Option<usize>)>> = vec![None; f.values.len()];
    let mut define = |c: &mut Checker, v: Value, site: (Block, Option<usize>)| {
        if v.index() >= def_site.len() {
            c.err(Some(site.0), format!("definition of unknown value {}", v.0));
            return;
        }
        if def_site[v.index()].is_some() {
            c.err(
                Some(site.0),
                format!("{} is defined more than once", c.name(v)),
            );
        } else {
            def_site[v.index()] = Some(site);
        }
    };
    for &p in &f.params {
        define(&mut c, p, (Block::ENTRY, None));
    }
    for b in f.block_ids() {
        for &p in &f.block(b).params {
            define(&mut c, p, (b, None));
        }
        for (i, inst) in f.block(b).insts.iter().enumerate() {
            if let Some(r) = inst.result {
                define(&mut c, r, (b, Some(i)));
            }
        }
    }

    let cfg = Cfg::new(f);
    let dom = DomTree::new(&cfg);
    let check_use = |c: &mut Checker, v: Value, b: Block, at: usize| {
        let Some(site) = def_site.get(v.index()).copied() else {
            c.err(Some(b), format!("use of unknown value {}", v.0));
            return;
        };
        let Some((db, pos)) = site else {
            c.err(Some(b), format!("use of undefined value {}", c.name(v)));
            return;
        };
        if !dom.is_reachable(b) {
            return;
        }
        let ok = if db == b {
            pos.is_none_or(|p| p < at)
        } else {
            dom.dominates(db, b)
        };
        if !ok {
            c.err(
                Some(b),
                format!(
                    "use of {} is not dominated by its definition in ^{}",
                    c.name(v),
                    f.block(db).label
                ),
            );
        }
    };

    for b in f.block_ids() {
        let data = f.block(b);
        for (i, inst) in data.insts.iter().enumerate() {
            for &a in &inst.args {
                check_use(&mut c, a, b, i);
            }
            check_inst_types(&mut c, b, inst, sigs);
        }
        let end = data.insts.len();
        for v in data.term.operands() {
            check_use(&mut c, v, b, end);
        }
        for e in data.term.edges() {
            for &a in &e.args {
                check_use(&mut c, a, b, end);
            }
        }
        check_terminator(&mut c, b, &data.term);
    }
}

fn check_inst_types(
    c: &mut Checker,
    b: Block,
    inst: &super::Inst,
    sigs: Option<&HashMap<&str, &Function>>,
) {
    use ScalarType::*;
    let mn = inst.op.mnemonic();
    let arg_tys: Vec<Option<ScalarType>> = inst.args.iter().map(|&a| c.ty(a)).collect();
    if arg_tys.iter().any(|t| t.is_none()) {
        return;
    }
    let tys: Vec<ScalarType> = arg_tys.into_iter().flatten().collect();

    // Expected operand types (`None` = any) and result type.
    let (expected, result): (Vec<Option<ScalarType>>, Option<ScalarType>) = match &inst.op {
        Opcode::Const(s) => (vec![], Some(s.ty)),
        Opcode::Binary(_) => {
            let t = tys.first().copied().unwrap_or(I64);
            (vec![Some(t), Some(t)], Some(t))
        }
        Opcode::Icmp(_) => {
            let t = tys.first().copied().unwrap_or(I64);
            (vec![Some(t), Some(t)], Some(I32))
        }
        Opcode::Select => {
            let t = tys.get(1).copied().unwrap_or(I64);
            (vec![None, Some(t), Some(t)], Some(t))
        }
        Opcode::Zext => (vec![Some(I32)], Some(I64)),
        Opcode::Trunc => (vec![Some(I64)], Some(I32)),
        Opcode::Load(w) => (vec![Some(I64)], Some(w.load_type())),
        Opcode::Store(w) => {
            let v = match w {
                MemWidth::W8 => None,
                MemWidth::W32 => Some(I32),
                MemWidth::W64 => Some(I64),
            };
            (vec![Some(I64), v], None)
        }
        Opcode::Print => (vec![Some(I64)], None),
        Opcode::Intrinsic(i) => {
            let operand = if *i == Intrinsic::AssertConst {
                None
            } else {
                Some(I64)
            };
            (
                vec![operand; i.arity()],
                if i.has_result() { Some(I64) } else { None },
            )
        }
        Opcode::Call(callee) => {
            let Some(sigs) = sigs else { return };
            match sigs.get(callee.as_str()) {
                None => {
                    c.err(Some(b), format!("call to unknown function @{}", callee));
                    return;
                }
                Some(g) => (
                    g.params.iter().map(|&p| Some(g.value_type(p))).collect(),
                    g.result,
                ),
            }
        }
    };

    if tys.len() != expected.len() {
        c.err(
            Some(b),
            format!(
                "'{}' expects {} operands, got {}",
                mn,
                expected.len(),
                tys.len()
            ),
        );
        return;
    }
    for (i, (t, e)) in tys.iter().zip(&expected).enumerate() {
        if let Some(e) = e {
            if t != e {
                c.err(
                    Some(b),
                    format!(
                        "operand {} of '{}' ({}) has type {}, expected {}",
                        i,
                        mn,
                        c.name(inst.args[i]),
                        t,
                        e
                    ),
                );
            }
        }
    }
    match (inst.result, result) {
        (Some(r), None) => c.err(
            Some(b),
            format!("'{}' produces no value but defines {}", mn, c.name(r)),
        ),
        (Some(r), Some(t)) => {
            if c.ty(r) != Some(t) {
                c.err(
                    Some(b),
                    format!("result {} of '{}' must have type {}", c.name(r), mn, t),
                );
            }
        }
        (None, _) => {}
    }
}

fn check_terminator(c: &mut Checker, b: Block, term: &Terminator) {
    let f = c.f;
    for e in term.edges() {
        if e.block.index() >= f.blocks.len() {
            c.err(
                Some(b),
                format!("branch to nonexistent block {}", e.block.0),
            );
            continue;
        }
        if e.block == Block::ENTRY {
            c.err(Some(b), "branch to the entry block".into());
        }
        let target = f.block(e.block);
        if e.args.len() != target.params.len() {
            c.err(
                Some(b),
                format!(
                    "edge to ^{} passes {} arguments, block takes {}",
                    target.label,
                    e.args.len(),
                    target.params.len()
                ),
            );
            continue;
        }
        for (&a, &p) in e.args.iter().zip(&target.params) {
            if let (Some(ta), Some(tp)) = (c.ty(a), c.ty(p)) {
                if ta != tp {
                    c.err(
                        Some(b),
                        format!(
                            "edge to ^{} passes {} of type {} for parameter {} of type {}",
                            target.label,
                            c.name(a),
                            ta,
                            c.name(p),
                            tp
                        ),
                    );
                }
            }
        }
    }
    if let Terminator::Return(v) = term {
        let got = v.and_then(|v| c.ty(v));
        if got != f.result {
            let show = |t: Option<ScalarType>| t.map_or("nothing".to_string(), |t| t.to_string());
            c.err(
                Some(b),
                format!(
                    "return of {} in a function returning {}",
                    show(got),
                    show(f.result)
                ),
            );
        }
    }
}
