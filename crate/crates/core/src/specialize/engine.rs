//! Context-keyed worklist specialization.
//!
//! Each specialized block is identified by a `(context, generic block)` key.
//! Processing a key rebuilds its block from scratch using the current entry
//! state; edges meet their abstract values and virtual state into the target
//! key's entry state and enqueue it when that state descends. Generic values
//! map to specialized values per context, and every generic instruction
//! result gets one stable specialized value per context so that rebuilds do
//! not invalidate downstream references.
//!
//! Besides entry-state changes, a block is also re-enqueued when something it
//! read during its last build changes: the mapping of a generic value in its
//! context, or the abstract state of a specialized value.

use std::collections::{HashMap, HashSet};

use crate::absint::{transfer, AbstractValue, ConstRanges};
use crate::ir::{
    BinaryOp, Block, BlockCall, BlockData, Function, Inst, Intrinsic, MemWidth, MemoryImage,
    NameAllocator, Opcode, Scalar, ScalarType, Terminator, Value,
};

use super::context::{self, ContextElem, Contexts, CtxId};
use super::state::{slot_value, Cell, EntryState, Operand, SlotKey, VirtualState};
use super::{Location, SpecializeError, SpecializeOptions};

type Key = (CtxId, Block);

struct BlockInfo {
    key: Option<Key>,
    /// Specialized values for the generic block's own parameters.
    params: Vec<Value>,
    entry: EntryState,
    exit: Option<VirtualState>,
    rebuilds: usize,
}

enum SplitPlan {
    None,
    Known(u64),
    Runtime {
        value: Value,
        low: u64,
        high: u64,
        result: Value,
    },
}

pub(crate) struct Output {
    pub function: Function,
    pub contexts: Vec<context::Context>,
    pub block_visits: usize,
    pub specialized_blocks: usize,
    pub max_rebuilds: usize,
}

pub(crate) struct Engine<'a> {
    generic: &'a Function,
    memory: &'a MemoryImage,
    ranges: &'a ConstRanges,
    opts: &'a SpecializeOptions,
    contexts: Contexts,
    out: Function,
    names: NameAllocator,
    labels: HashSet<String>,
    blockmap: HashMap<Key, Block>,
    blocks: Vec<BlockInfo>,
    valuemap: HashMap<(CtxId, Value), Value>,
    valuestate: Vec<AbstractValue>,
    stable: HashMap<(CtxId, Value), Value>,
    slot_params: HashMap<(CtxId, Block, SlotKey), Value>,
    fparams: HashMap<Value, Value>,
    /// Specialized block parameters; constant ones are rematerialized at
    /// their uses so clean-up can drop them.
    block_params: HashSet<Value>,
    deps_by_value: HashMap<Value, HashSet<Key>>,
    deps_by_name: HashMap<(CtxId, Value), HashSet<Key>>,
    worklist: Vec<Key>,
    queued: HashSet<Key>,
    trap_block: Option<Block>,
    visits: usize,
}

impl<'a> Engine<'a> {
    pub fn new(
        generic: &'a Function,
        output_name: &str,
        param_states: &[AbstractValue],
        memory: &'a MemoryImage,
        ranges: &'a ConstRanges,
        opts: &'a SpecializeOptions,
    ) -> Self {
        let mut out = Function::new(output_name);
        out.result = generic.result;
        let mut valuestate = Vec::new();
        let mut fparams = HashMap::new();
        for (&p, &av) in generic.params.iter().zip(param_states) {
            let v = out.add_value(generic.value_name(p), generic.value_type(p));
            out.params.push(v);
            valuestate.push(av);
            fparams.insert(p, v);
        }
        let names = NameAllocator::for_function(&out);
        Engine {
            generic,
            memory,
            ranges,
            opts,
            contexts: Contexts::new(opts.max_contexts),
            out,
            names,
            labels: HashSet::new(),
            blockmap: HashMap::new(),
            blocks: Vec::new(),
            valuemap: HashMap::new(),
            valuestate,
            stable: HashMap::new(),
            slot_params: HashMap::new(),
            fparams,
            block_params: HashSet::new(),
            deps_by_value: HashMap::new(),
            deps_by_name: HashMap::new(),
            worklist: Vec::new(),
            queued: HashSet::new(),
            trap_block: None,
            visits: 0,
        }
    }

    pub fn run(mut self) -> Result<Output, SpecializeError> {
        let entry_key = (CtxId::ROOT, Block::ENTRY);
        self.create_block(entry_key, &[], &VirtualState::default());
        while let Some(key) = self.worklist.pop() {
            self.queued.remove(&key);
            self.process(key)?;
        }
        self.finalize()?;
        let max_rebuilds = self.blocks.iter().map(|b| b.rebuilds).max().unwrap_or(0);
        Ok(Output {
            specialized_blocks: self.blockmap.len(),
            block_visits: self.visits,
            max_rebuilds,
            contexts: self.contexts.into_list(),
            function: self.out,
        })
    }

    // ----- values and dependencies -------------------------------------

    fn new_value(&mut self, hint: &str, ty: ScalarType, av: AbstractValue) -> Value {
        let v = self.out.add_value(self.names.fresh(hint), ty);
        self.valuestate.push(av);
        v
    }

    fn stable_value(&mut self, ctx: CtxId, gv: Value) -> Value {
        if let Some(&v) = self.stable.get(&(ctx, gv)) {
            return v;
        }
        let g = self.generic;
        let v = self.new_value(g.value_name(gv), g.value_type(gv), AbstractValue::Unknown);
        self.stable.insert((ctx, gv), v);
        v
    }

    fn enqueue(&mut self, key: Key) {
        if self.queued.insert(key) {
            self.worklist.push(key);
        }
    }

    fn wake(&mut self, deps: Option<HashSet<Key>>, exclude: Option<Key>) {
        for k in deps.into_iter().flatten() {
            if Some(k) != exclude {
                self.enqueue(k);
            }
        }
    }

    fn set_state(&mut self, v: Value, av: AbstractValue, exclude: Option<Key>) {
        if self.valuestate[v.index()] != av {
            self.valuestate[v.index()] = av;
            let deps = self.deps_by_value.get(&v).cloned();
            self.wake(deps, exclude);
        }
    }

    fn define(&mut self, key: Key, gv: Value, v: Value) {
        let old = self.valuemap.insert((key.0, gv), v);
        if old != Some(v) {
            let deps = self.deps_by_name.get(&(key.0, gv)).cloned();
            self.wake(deps, Some(key));
        }
    }

    fn lookup(&mut self, key: Key, gv: Value, loc: &Location) -> Result<Value, SpecializeError> {
        if let Some(&v) = self.fparams.get(&gv) {
            return Ok(v);
        }
        self.deps_by_name
            .entry((key.0, gv))
            .or_default()
            .insert(key);
        self.valuemap.get(&(key.0, gv)).copied().ok_or_else(|| {
            SpecializeError::Internal(format!(
                "{}: %{} has no specialized value in context {}",
                loc,
                self.generic.value_name(gv),
                context::display_context(self.contexts.get(key.0))
            ))
        })
    }

    fn read_state(&mut self, key: Key, v: Value) -> AbstractValue {
        self.deps_by_value.entry(v).or_default().insert(key);
        self.valuestate[v.index()]
    }

    fn operand(&self, v: Value, av: AbstractValue) -> Operand {
        match av {
            AbstractValue::Const(s) => Operand::Const(s),
            AbstractValue::Unknown => Operand::Val(v),
        }
    }

    fn emit(&mut self, ob: Block, result: Option<Value>, op: Opcode, args: Vec<Value>) {
        self.out.block_mut(ob).insts.push(Inst { result, op, args });
    }

    fn materialize(&mut self, ob: Block, o: Operand) -> Value {
        match o {
            Operand::Val(v) => v,
            Operand::Const(s) => {
                let v = self.new_value("", s.ty, AbstractValue::Const(s));
                self.emit(ob, Some(v), Opcode::Const(s), vec![]);
                v
            }
        }
    }

    /// The value to reference for a use of `v` in block `ob`.
    fn use_of(&mut self, ob: Block, v: Value, av: AbstractValue) -> Value {
        match av {
            AbstractValue::Const(s) if self.block_params.contains(&v) => {
                self.materialize(ob, Operand::Const(s))
            }
            _ => v,
        }
    }

    /// Binds generic result `gv` to an operand: constants are emitted under
    /// the stable value, other values are aliased.
    fn bind(&mut self, key: Key, ob: Block, gv: Option<Value>, o: Operand) {
        let Some(gv) = gv else { return };
        match o {
            Operand::Const(s) => {
                let v = self.stable_value(key.0, gv);
                self.emit(ob, Some(v), Opcode::Const(s), vec![]);
                self.set_state(v, AbstractValue::Const(s), Some(key));
                self.define(key, gv, v);
            }
            Operand::Val(v) => self.define(key, gv, v),
        }
    }

    /// Emits `inst` with mapped arguments and an unknown result.
    fn clone_inst(&mut self, key: Key, ob: Block, gv: Option<Value>, op: Opcode, args: Vec<Value>) {
        let result = gv.map(|gv| self.stable_value(key.0, gv));
        self.emit(ob, result, op, args);
        if let (Some(gv), Some(v)) = (gv, result) {
            self.set_state(v, AbstractValue::Unknown, Some(key));
            self.define(key, gv, v);
        }
    }

    fn slot_param(&mut self, ctx: CtxId, gb: Block, k: SlotKey) -> Value {
        if let Some(&v) = self.slot_params.get(&(ctx, gb, k)) {
            return v;
        }
        let hint = match k {
            SlotKey::Reg(i) => format!("r{}", i),
            SlotKey::Local(i) => format!("local{}", i),
            SlotKey::Stack(i) => format!("stack{}", i),
        };
        let v = self.new_value(&hint, ScalarType::I64, AbstractValue::Unknown);
        self.slot_params.insert((ctx, gb, k), v);
        v
    }

    // ----- blocks ------------------------------------------------------

    fn create_block(&mut self, key: Key, args: &[AbstractValue], state: &VirtualState) -> Block {
        let g = self.generic;
        let (ctx, gb) = key;
        let base = if ctx == CtxId::ROOT {
            g.block(gb).label.clone()
        } else {
            format!("{}_c{}", g.block(gb).label, ctx.0)
        };
        let mut label = base.clone();
        let mut n = 1;
        while !self.labels.insert(label.clone()) {
            label = format!("{}.{}", base, n);
            n += 1;
        }
        let ob = self.out.add_block(label);
        let mut params = Vec::new();
        for (&gp, &av) in g.block(gb).params.iter().zip(args) {
            let v = self.new_value(g.value_name(gp), g.value_type(gp), av);
            self.block_params.insert(v);
            self.define(key, gp, v);
            params.push(v);
        }
        self.blocks.push(BlockInfo {
            key: Some(key),
            params,
            entry: EntryState::from_exit(state),
            exit: None,
            rebuilds: 0,
        });
        self.blockmap.insert(key, ob);
        self.enqueue(key);
        ob
    }

    fn evaluate_target(
        &mut self,
        key: Key,
        args: &[(Value, AbstractValue)],
        state: &VirtualState,
    ) -> Block {
        let Some(&ob) = self.blockmap.get(&key) else {
            let avs: Vec<AbstractValue> = args.iter().map(|a| a.1).collect();
            return self.create_block(key, &avs, state);
        };
        let mut changed = false;
        for (i, arg) in args.iter().enumerate() {
            let p = self.blocks[ob.index()].params[i];
            let new = self.valuestate[p.index()].meet(arg.1);
            if new != self.valuestate[p.index()] {
                self.set_state(p, new, None);
                changed = true;
            }
        }
        if self.blocks[ob.index()].entry.meet(state) {
            changed = true;
        }
        if changed {
            self.enqueue(key);
        }
        ob
    }

    fn intern(&mut self, ctx: context::Context, loc: &Location) -> Result<CtxId, SpecializeError> {
        self.contexts
            .intern(ctx)
            .ok_or_else(|| SpecializeError::ContextLimit {
                location: loc.clone(),
                limit: self.opts.max_contexts,
            })
    }

    fn trap_block(&mut self) -> Block {
        if let Some(b) = self.trap_block {
            return b;
        }
        let mut label = "split_out_of_range".to_string();
        while !self.labels.insert(label.clone()) {
            label.push('_');
        }
        let b = self.out.add_block(label);
        self.out.block_mut(b).term = Terminator::Trap("specialized_value out of range".into());
        self.blocks.push(BlockInfo {
            key: None,
            params: Vec::new(),
            entry: EntryState::default(),
            exit: None,
            rebuilds: 0,
        });
        self.trap_block = Some(b);
        b
    }

    fn location(&self, gb: Block, inst: Option<usize>) -> Location {
        Location {
            function: self.generic.name.clone(),
            block: self.generic.block(gb).label.clone(),
            inst,
        }
    }

    // ----- state intrinsics --------------------------------------------

    fn flush_all(&mut self, ob: Block, state: &mut VirtualState) {
        for (_, cell) in state.dirty_cells() {
            let addr = self.materialize(ob, cell.addr);
            let value = self.materialize(ob, cell.value);
            self.emit(ob, None, Opcode::Store(MemWidth::W64), vec![addr, value]);
        }
        state.locals.clear();
        state.stack.clear();
    }

    fn real_load(&mut self, key: Key, ob: Block, gv: Option<Value>, addr: Value) -> Option<Value> {
        let result = gv.map(|gv| self.stable_value(key.0, gv));
        self.emit(ob, result, Opcode::Load(MemWidth::W64), vec![addr]);
        if let (Some(gv), Some(v)) = (gv, result) {
            self.set_state(v, AbstractValue::Unknown, Some(key));
            self.define(key, gv, v);
        }
        result
    }

    fn const_arg(
        &self,
        av: AbstractValue,
        loc: &Location,
        intrinsic: Intrinsic,
    ) -> Result<u64, SpecializeError> {
        av.as_const()
            .map(|s| s.bits)
            .ok_or_else(|| SpecializeError::NonConstOperand {
                location: loc.clone(),
                intrinsic: intrinsic.name(),
            })
    }

    // ----- the main per-block transfer ---------------------------------

    fn process(&mut self, key: Key) -> Result<(), SpecializeError> {
        let g: &'a Function = self.generic;
        let (ctx, gb) = key;
        let ob = self.blockmap[&key];
        self.visits += 1;
        let info = &mut self.blocks[ob.index()];
        info.rebuilds += 1;
        if info.rebuilds > self.opts.max_rebuilds {
            return Err(SpecializeError::RebuildLimit {
                location: self.location(gb, None),
                context: context::display_context(self.contexts.get(ctx)),
                limit: self.opts.max_rebuilds,
            });
        }
        log::trace!(
            "specializing ^{} in {}",
            g.block(gb).label,
            context::display_context(self.contexts.get(ctx))
        );
        self.out.block_mut(ob).insts.clear();
        let entry = self.blocks[ob.index()].entry.clone();
        let mut state = entry.instantiate(|k| self.slot_param(ctx, gb, k));
        let mut pending: context::Context = self.contexts.get(ctx).clone();
        let mut split = SplitPlan::None;

        for (idx, inst) in g.block(gb).insts.iter().enumerate() {
            let loc = self.location(gb, Some(idx));
            let mut args = Vec::with_capacity(inst.args.len());
            let mut avs = Vec::with_capacity(inst.args.len());
            for &a in &inst.args {
                let v = self.lookup(key, a, &loc)?;
                let av = self.read_state(key, v);
                args.push(self.use_of(ob, v, av));
                avs.push(av);
            }
            let gv = inst.result;
            match &inst.op {
                Opcode::Intrinsic(kind) => {
                    let kind = *kind;
                    match kind {
                        Intrinsic::PushContext | Intrinsic::UpdateContext => {
                            let Some(s) = avs[0].as_const() else {
                                return Err(SpecializeError::NonConstContext {
                                    location: loc,
                                    intrinsic: kind.name(),
                                });
                            };
                            if kind == Intrinsic::PushContext {
                                context::push_context(&mut pending, s.bits);
                            } else {
                                context::update_context(&mut pending, s.bits);
                            }
                        }
                        Intrinsic::PopContext => {
                            if !context::pop_context(&mut pending) {
                                return Err(SpecializeError::PopEmptyContext { location: loc });
                            }
                        }
                        Intrinsic::AssertConst => {
                            if !avs[0].is_const() {
                                return Err(SpecializeError::AssertConstFailed { location: loc });
                            }
                        }
                        Intrinsic::SpecializedValue => {
                            let low = self.const_arg(avs[1], &loc, kind)?;
                            let high = self.const_arg(avs[2], &loc, kind)?;
                            let width = high.checked_sub(low).map(|w| w as u128 + 1);
                            if width.is_none_or(|w| w > self.opts.max_split_width as u128) {
                                return Err(SpecializeError::SplitTooWide {
                                    location: loc,
                                    low,
                                    high,
                                    limit: self.opts.max_split_width,
                                });
                            }
                            match avs[0].as_const() {
                                Some(s) if (low..=high).contains(&s.bits) => {
                                    self.bind(key, ob, gv, Operand::Const(s));
                                    split = SplitPlan::Known(s.bits);
                                }
                                Some(_) => {
                                    // Statically out of range: the default arm.
                                    self.out.block_mut(ob).term =
                                        Terminator::Trap("specialized_value out of range".into());
                                    self.blocks[ob.index()].exit = Some(state);
                                    return Ok(());
                                }
                                None => {
                                    if let Some(gv) = gv {
                                        self.define(key, gv, args[0]);
                                    }
                                    split = SplitPlan::Runtime {
                                        value: args[0],
                                        low,
                                        high,
                                        result: gv.unwrap_or(Value(u32::MAX)),
                                    };
                                }
                            }
                        }
                        Intrinsic::LoadRegister => {
                            let i = self.const_arg(avs[0], &loc, kind)?;
                            self.bind(key, ob, gv, state.reg(i));
                        }
                        Intrinsic::StoreRegister => {
                            let i = self.const_arg(avs[0], &loc, kind)?;
                            let o = self.operand(args[1], avs[1]);
                            state.set_reg(i, o);
                        }
                        Intrinsic::LocalRead => {
                            let i = self.const_arg(avs[0], &loc, kind)?;
                            let addr = self.operand(args[1], avs[1]);
                            match state.locals.get(&i) {
                                Some(c) if c.addr == addr => {
                                    let value = c.value;
                                    self.bind(key, ob, gv, value);
                                }
                                other => {
                                    if other.is_some() {
                                        self.flush_all(ob, &mut state);
                                    }
                                    if let Some(v) = self.real_load(key, ob, gv, args[1]) {
                                        state.locals.insert(
                                            i,
                                            Cell {
                                                addr,
                                                value: Operand::Val(v),
                                                dirty: false,
                                            },
                                        );
                                    }
                                }
                            }
                        }
                        Intrinsic::LocalWrite => {
                            let i = self.const_arg(avs[0], &loc, kind)?;
                            let addr = self.operand(args[1], avs[1]);
                            if state.locals.get(&i).is_some_and(|c| c.addr != addr) {
                                self.flush_all(ob, &mut state);
                            }
                            let value = self.operand(args[2], avs[2]);
                            state.locals.insert(
                                i,
                                Cell {
                                    addr,
                                    value,
                                    dirty: true,
                                },
                            );
                        }
                        Intrinsic::StackPush => {
                            let addr = self.operand(args[0], avs[0]);
                            let value = self.operand(args[1], avs[1]);
                            state.stack.push(Cell {
                                addr,
                                value,
                                dirty: true,
                            });
                        }
                        Intrinsic::StackPop => {
                            let addr = self.operand(args[0], avs[0]);
                            match state.stack.last() {
                                Some(c) if c.addr == addr => {
                                    let value = c.value;
                                    state.stack.pop();
                                    self.bind(key, ob, gv, value);
                                }
                                top => {
                                    if top.is_some() {
                                        self.flush_all(ob, &mut state);
                                    }
                                    self.real_load(key, ob, gv, args[0]);
                                }
                            }
                        }
                        Intrinsic::StackRead | Intrinsic::StackWrite => {
                            let depth = self.const_arg(avs[0], &loc, kind)?;
                            let addr = self.operand(args[1], avs[1]);
                            let slot = (depth < state.stack.len() as u64)
                                .then(|| state.stack.len() - 1 - depth as usize);
                            let hit = slot.filter(|&s| state.stack[s].addr == addr);
                            if slot.is_some() && hit.is_none() {
                                self.flush_all(ob, &mut state);
                            }
                            match (kind, hit) {
                                (Intrinsic::StackRead, Some(s)) => {
                                    let value = state.stack[s].value;
                                    self.bind(key, ob, gv, value);
                                }
                                (Intrinsic::StackRead, None) => {
                                    self.real_load(key, ob, gv, args[1]);
                                }
                                (_, Some(s)) => {
                                    let value = self.operand(args[2], avs[2]);
                                    state.stack[s].value = value;
                                    state.stack[s].dirty = true;
                                }
                                (_, None) => {
                                    self.emit(
                                        ob,
                                        None,
                                        Opcode::Store(MemWidth::W64),
                                        vec![args[1], args[2]],
                                    );
                                }
                            }
                        }
                        Intrinsic::Flush => self.flush_all(ob, &mut state),
                    }
                }
                Opcode::Store(_) | Opcode::Print | Opcode::Call(_) => {
                    self.clone_inst(key, ob, gv, inst.op.clone(), args);
                }
                op => {
                    let mut av = transfer(op, &avs, self.ranges, self.memory);
                    if self.opts.break_transfer && *op == Opcode::Binary(BinaryOp::Add) {
                        if let AbstractValue::Const(s) = av {
                            av = AbstractValue::Const(Scalar::new(s.ty, s.bits.wrapping_add(1)));
                        }
                    }
                    match (av, op) {
                        (AbstractValue::Const(s), _) => self.bind(key, ob, gv, Operand::Const(s)),
                        (_, Opcode::Select) if avs[0].is_const() => {
                            let chosen = if avs[0].as_const().unwrap().bits != 0 {
                                args[1]
                            } else {
                                args[2]
                            };
                            self.bind(key, ob, gv, Operand::Val(chosen));
                        }
                        // Dead pure instruction.
                        _ if gv.is_none() && op.is_pure() => {}
                        _ => self.clone_inst(key, ob, gv, op.clone(), args),
                    }
                }
            }
        }

        let loc = self.location(gb, None);
        let term = match &g.block(gb).term {
            Terminator::Return(v) => {
                if !state.dirty_cells().is_empty() {
                    self.flush_all(ob, &mut state);
                }
                let v = match v {
                    Some(v) => {
                        let v = self.lookup(key, *v, &loc)?;
                        let av = self.read_state(key, v);
                        Some(self.use_of(ob, v, av))
                    }
                    None => None,
                };
                Terminator::Return(v)
            }
            Terminator::Trap(msg) => Terminator::Trap(msg.clone()),
            Terminator::Br(call) => match split {
                SplitPlan::None => {
                    let tctx = self.intern(pending, &loc)?;
                    Terminator::Br(self.edge(key, tctx, call, None, &state, &loc)?)
                }
                SplitPlan::Known(k) => {
                    pending.push(ContextElem::Split(k));
                    let tctx = self.intern(pending, &loc)?;
                    Terminator::Br(self.edge(key, tctx, call, None, &state, &loc)?)
                }
                SplitPlan::Runtime {
                    value,
                    low,
                    high,
                    result,
                } => {
                    let mut arms = Vec::new();
                    for k in low..=high {
                        let mut c = pending.clone();
                        c.push(ContextElem::Split(k));
                        let tctx = self.intern(c, &loc)?;
                        let known = AbstractValue::Const(Scalar::i64(k));
                        arms.push(self.edge(
                            key,
                            tctx,
                            call,
                            Some((result, value, known)),
                            &state,
                            &loc,
                        )?);
                    }
                    if arms.len() == 1 {
                        Terminator::Br(arms.pop().unwrap())
                    } else {
                        let selector = if low != 0 {
                            let lo = self.materialize(ob, Operand::Const(Scalar::i64(low)));
                            let sel =
                                self.new_value("sel", ScalarType::I64, AbstractValue::Unknown);
                            self.emit(
                                ob,
                                Some(sel),
                                Opcode::Binary(BinaryOp::Sub),
                                vec![value, lo],
                            );
                            sel
                        } else {
                            value
                        };
                        let trap = self.trap_block();
                        Terminator::BrTable {
                            selector,
                            targets: arms,
                            default: BlockCall::new(trap, vec![]),
                        }
                    }
                }
            },
            Terminator::BrIf {
                cond,
                then_dest,
                else_dest,
            } => {
                let c = self.lookup(key, *cond, &loc)?;
                let tctx = self.intern(pending, &loc)?;
                match self.read_state(key, c).as_const() {
                    Some(s) => {
                        let dest = if s.bits != 0 { then_dest } else { else_dest };
                        Terminator::Br(self.edge(key, tctx, dest, None, &state, &loc)?)
                    }
                    None => Terminator::BrIf {
                        cond: c,
                        then_dest: self.edge(key, tctx, then_dest, None, &state, &loc)?,
                        else_dest: self.edge(key, tctx, else_dest, None, &state, &loc)?,
                    },
                }
            }
            Terminator::BrTable {
                selector,
                targets,
                default,
            } => {
                let s = self.lookup(key, *selector, &loc)?;
                let tctx = self.intern(pending, &loc)?;
                match self.read_state(key, s).as_const() {
                    Some(k) => {
                        let dest = usize::try_from(k.bits)
                            .ok()
                            .and_then(|i| targets.get(i))
                            .unwrap_or(default);
                        Terminator::Br(self.edge(key, tctx, dest, None, &state, &loc)?)
                    }
                    None => {
                        let mut out = Vec::with_capacity(targets.len());
                        for t in targets {
                            out.push(self.edge(key, tctx, t, None, &state, &loc)?);
                        }
                        Terminator::BrTable {
                            selector: s,
                            targets: out,
                            default: self.edge(key, tctx, default, None, &state, &loc)?,
                        }
                    }
                }
            }
        };
        self.out.block_mut(ob).term = term;
        self.blocks[ob.index()].exit = Some(state);
        Ok(())
    }

    fn edge(
        &mut self,
        key: Key,
        tctx: CtxId,
        call: &BlockCall,
        split: Option<(Value, Value, AbstractValue)>,
        state: &VirtualState,
        loc: &Location,
    ) -> Result<BlockCall, SpecializeError> {
        let mut args = Vec::with_capacity(call.args.len());
        for &a in &call.args {
            match split {
                Some((result, value, known)) if a == result => args.push((value, known)),
                _ => {
                    let v = self.lookup(key, a, loc)?;
                    let av = self.read_state(key, v);
                    args.push((v, av));
                }
            }
        }
        let target = self.evaluate_target((tctx, call.block), &args, state);
        Ok(BlockCall::new(
            target,
            args.into_iter().map(|a| a.0).collect(),
        ))
    }

    // ----- finalization ------------------------------------------------

    /// Adds slot parameters, fills the matching edge arguments, and writes
    /// back dirty state that a successor's entry state no longer tracks.
    fn finalize(&mut self) -> Result<(), SpecializeError> {
        let mut slot_lists: HashMap<Block, Vec<SlotKey>> = HashMap::new();
        for bi in 0..self.blocks.len() {
            let Some((ctx, gb)) = self.blocks[bi].key else {
                continue;
            };
            let slots = self.blocks[bi].entry.merged_slots();
            let mut params = self.blocks[bi].params.clone();
            for &k in &slots {
                params.push(self.slot_param(ctx, gb, k));
            }
            self.out.blocks[bi].params = params;
            slot_lists.insert(Block(bi as u32), slots);
        }

        for bi in 0..self.blocks.len() {
            let Some(exit) = self.blocks[bi].exit.clone() else {
                continue;
            };
            let ob = Block(bi as u32);
            let mut term =
                std::mem::replace(&mut self.out.blocks[bi].term, Terminator::Return(None));
            let mut flush: HashSet<SlotKey> = HashSet::new();
            for e in term.edges_mut() {
                let Some(slots) = slot_lists.get(&e.block) else {
                    continue;
                };
                let entry = &self.blocks[e.block.index()].entry;
                for (k, _) in exit.dirty_cells() {
                    let kept = match k {
                        SlotKey::Local(i) => entry.locals.contains_key(&i),
                        SlotKey::Stack(_) => entry.stack.len() == exit.stack.len(),
                        SlotKey::Reg(_) => true,
                    };
                    if !kept {
                        flush.insert(k);
                    }
                }
                for &k in slots {
                    let o = slot_value(&exit, k).ok_or_else(|| {
                        SpecializeError::Internal(format!(
                            "edge into ^{} lacks state slot {:?}",
                            self.out.block(e.block).label,
                            k
                        ))
                    })?;
                    let v = self.materialize(ob, o);
                    e.args.push(v);
                }
            }
            for (k, cell) in exit.dirty_cells() {
                if flush.contains(&k) {
                    let addr = self.materialize(ob, cell.addr);
                    let value = self.materialize(ob, cell.value);
                    self.emit(ob, None, Opcode::Store(MemWidth::W64), vec![addr, value]);
                }
            }
            self.out.blocks[bi].term = term;
        }
        Ok(())
    }
}

/// Counts instructions per opcode mnemonic (with immediates), used to compare
/// bodies modulo value renaming.
pub fn opcode_multiset(f: &Function) -> std::collections::BTreeMap<String, usize> {
    let mut out = std::collections::BTreeMap::new();
    for inst in f.blocks.iter().flat_map(|b: &BlockData| &b.insts) {
        let key = match &inst.op {
            Opcode::Const(s) => format!("{} {}", inst.op.mnemonic(), s.bits),
            Opcode::Call(name) => format!("call @{}", name),
            op => op.mnemonic(),
        };
        *out.entry(key).or_insert(0) += 1;
    }
    out
}
