//! Interpreter specialization.
//!
//! [`specialize`] takes a generic function annotated with context intrinsics
//! and a [`SpecializationRequest`] describing which arguments and memory
//! ranges are constant, and produces a new function with the same signature.
//!
//! Pipeline:
//! 1. blocks are split after each `specialized_value`;
//! 2. SSA repair adds block parameters at context cut points;
//! 3. the worklist engine specializes blocks per context;
//! 4. clean-up removes dead code, merges chains and compacts.

mod cleanup;
mod context;
mod engine;
mod polyfill;
mod repair;
mod request;
mod state;

use std::fmt;

use rayon::prelude::*;

use crate::absint::{AbstractValue, ConstRanges, RangeError};
use crate::ir::{validate, validate_function, Diagnostic, Function, Module, Scalar};

pub use cleanup::cleanup;
pub use context::{display_context, Context, ContextElem};
pub use engine::opcode_multiset;
pub use polyfill::{
    polyfill_function, polyfill_module, scratch_base, REGISTER_COUNT, SCRATCH_BYTES,
};
pub use repair::{find_cuts, split_after_value_splits, ssa_repair, RepairInfo, SsaRepairMode};
pub use request::{parse_requests, sidecar, ArgMode, RequestError, SpecializationRequest};
pub use state::{Operand, SlotKey};

#[derive(Clone, Debug)]
pub struct SpecializeOptions {
    pub ssa_repair: SsaRepairMode,
    /// Rebuilds allowed per (context, block) before giving up.
    pub max_rebuilds: usize,
    /// Distinct contexts allowed per specialization.
    pub max_contexts: usize,
    /// Widest `specialized_value` range accepted.
    pub max_split_width: u64,
    /// Test hook: makes constant-folded `iadd` off by one.
    #[doc(hidden)]
    pub break_transfer: bool,
}

impl Default for SpecializeOptions {
    fn default() -> Self {
        SpecializeOptions {
            ssa_repair: SsaRepairMode::Hsca,
            max_rebuilds: 1000,
            max_contexts: 100_000,
            max_split_width: 256,
            break_transfer: false,
        }
    }
}

/// A position in the generic function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Location {
    pub function: String,
    pub block: String,
    pub inst: Option<usize>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{} ^{}", self.function, self.block)?;
        if let Some(i) = self.inst {
            write!(f, " instruction {}", i)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SpecializeError {
    #[error("no function named @{0}")]
    UnknownFunction(String),
    #[error("a function named @{0} already exists")]
    DuplicateOutput(String),
    #[error("request gives {got} argument modes but @{func} takes {expected} parameters")]
    ArgCount {
        func: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid constant memory range: {0}")]
    BadRange(#[from] RangeError),
    #[error("input does not validate: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("{location}: {intrinsic} operand is not a compile-time constant")]
    NonConstContext {
        location: Location,
        intrinsic: &'static str,
    },
    #[error("{location}: assert_const operand is not a compile-time constant")]
    AssertConstFailed { location: Location },
    #[error("{location}: {intrinsic} requires a constant index, depth or bound")]
    NonConstOperand {
        location: Location,
        intrinsic: &'static str,
    },
    #[error("{location}: pop_context on an empty context")]
    PopEmptyContext { location: Location },
    #[error("{location}: specialized_value range [{low}, {high}] is empty or wider than {limit}")]
    SplitTooWide {
        location: Location,
        low: u64,
        high: u64,
        limit: u64,
    },
    #[error("{location} in context {context} was rebuilt more than {limit} times")]
    RebuildLimit {
        location: Location,
        context: String,
        limit: usize,
    },
    #[error("{location}: more than {limit} contexts")]
    ContextLimit { location: Location, limit: usize },
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpecializeStats {
    pub contexts: usize,
    pub specialized_blocks: usize,
    pub block_visits: usize,
    pub max_rebuilds: usize,
    /// Cut blocks chosen by SSA repair in the generic function.
    pub cut_blocks: usize,
    /// Block parameters added by SSA repair in the generic function.
    pub repair_params: usize,
    pub output_blocks: usize,
    pub output_insts: usize,
    pub output_block_params: usize,
}

#[derive(Clone, Debug)]
pub struct Specialized {
    pub function: Function,
    pub stats: SpecializeStats,
    /// Every context created, indexed by id.
    pub contexts: Vec<Context>,
}

/// Specializes `req.target` and returns the new function (not yet added to
/// the module).
pub fn specialize_function(
    m: &Module,
    req: &SpecializationRequest,
    opts: &SpecializeOptions,
) -> Result<Specialized, SpecializeError> {
    let target = m
        .function(&req.target)
        .ok_or_else(|| SpecializeError::UnknownFunction(req.target.clone()))?;
    if req.arg_modes.len() != target.params.len() {
        return Err(SpecializeError::ArgCount {
            func: req.target.clone(),
            expected: target.params.len(),
            got: req.arg_modes.len(),
        });
    }
    let diags = validate_function(target);
    if !diags.is_empty() {
        return Err(SpecializeError::Invalid(diags));
    }

    let mut ranges = Vec::new();
    let mut param_states = Vec::new();
    for (&p, mode) in target.params.iter().zip(&req.arg_modes) {
        let ty = target.value_type(p);
        param_states.push(match *mode {
            ArgMode::RunTime => AbstractValue::Unknown,
            ArgMode::Const(v) => AbstractValue::Const(Scalar::new(ty, v)),
            ArgMode::Memory { addr, len } => {
                ranges.push((addr, len));
                AbstractValue::Const(Scalar::new(ty, addr))
            }
        });
    }
    let ranges = ConstRanges::new(ranges, m.memory.size)?;

    let mut generic = target.clone();
    split_after_value_splits(&mut generic);
    let repair = ssa_repair(&mut generic, opts.ssa_repair);
    let diags = validate_function(&generic);
    if !diags.is_empty() {
        return Err(SpecializeError::Internal(format!(
            "SSA repair produced invalid IR: {}",
            diags[0]
        )));
    }

    let out = engine::Engine::new(
        &generic,
        &req.output_name,
        &param_states,
        &m.memory,
        &ranges,
        opts,
    )
    .run()?;
    let mut function = out.function;
    cleanup(&mut function);
    let diags = validate_function(&function);
    if !diags.is_empty() {
        return Err(SpecializeError::Internal(format!(
            "specialized output does not validate: {}\n{}",
            diags[0], function
        )));
    }

    let stats = SpecializeStats {
        contexts: out.contexts.len(),
        specialized_blocks: out.specialized_blocks,
        block_visits: out.block_visits,
        max_rebuilds: out.max_rebuilds,
        cut_blocks: repair.cut_blocks.len(),
        repair_params: repair.params_added,
        output_blocks: function.blocks.len(),
        output_insts: function.inst_count(),
        output_block_params: function.block_param_count(),
    };
    log::debug!(
        "specialized @{} into @{}: {:?}",
        req.target,
        req.output_name,
        stats
    );
    Ok(Specialized {
        function,
        stats,
        contexts: out.contexts,
    })
}

/// Specializes one request and appends the result to a copy of `m`.
pub fn specialize(
    m: &Module,
    req: &SpecializationRequest,
    opts: &SpecializeOptions,
) -> Result<(Module, SpecializeStats), SpecializeError> {
    let (m, mut stats) = specialize_all(m, std::slice::from_ref(req), opts)?;
    Ok((m, stats.pop().unwrap()))
}

/// Runs all requests in parallel and appends their outputs in request order.
pub fn specialize_all(
    m: &Module,
    reqs: &[SpecializationRequest],
    opts: &SpecializeOptions,
) -> Result<(Module, Vec<SpecializeStats>), SpecializeError> {
    let diags = validate(m);
    if !diags.is_empty() {
        return Err(SpecializeError::Invalid(diags));
    }
    let mut names: std::collections::HashSet<&str> =
        m.functions.iter().map(|f| f.name.as_str()).collect();
    for r in reqs {
        if !names.insert(&r.output_name) {
            return Err(SpecializeError::DuplicateOutput(r.output_name.clone()));
        }
    }
    let results: Vec<Result<Specialized, SpecializeError>> = reqs
        .par_iter()
        .map(|r| specialize_function(m, r, opts))
        .collect();
    let mut out = m.clone();
    let mut stats = Vec::new();
    for r in results {
        let s = r?;
        out.functions.push(s.function);
        stats.push(s.stats);
    }
    Ok((out, stats))
}
