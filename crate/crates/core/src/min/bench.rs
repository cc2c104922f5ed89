use std::fmt;
use std::str::FromStr;

use crate::exec::{run, ExecError, ExecOptions, Outcome, WatchRange};
use crate::ir::Module;
use crate::specialize::{polyfill_module, specialize, SpecializeError, SpecializeOptions};

use super::{
    attach_program, interpreter_args, interpreter_module, min_request, MinProgram, Variant,
};
use super::{BYTECODE_BASE, BYTECODE_LABEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchConfig {
    InterpPlain,
    InterpState,
    SpecializedPlain,
    SpecializedState,
}

impl BenchConfig {
    pub const ALL: [BenchConfig; 4] = [
        BenchConfig::InterpPlain,
        BenchConfig::InterpState,
        BenchConfig::SpecializedPlain,
        BenchConfig::SpecializedState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchConfig::InterpPlain => "interp-plain",
            BenchConfig::InterpState => "interp-state",
            BenchConfig::SpecializedPlain => "specialized-plain",
            BenchConfig::SpecializedState => "specialized-state",
        }
    }

    fn variant(self) -> Variant {
        match self {
            BenchConfig::InterpPlain | BenchConfig::SpecializedPlain => Variant::Plain,
            BenchConfig::InterpState | BenchConfig::SpecializedState => Variant::State,
        }
    }

    fn specialized(self) -> bool {
        matches!(
            self,
            BenchConfig::SpecializedPlain | BenchConfig::SpecializedState
        )
    }
}

impl fmt::Display for BenchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchConfig {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        BenchConfig::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown bench config '{}'", s))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub config: BenchConfig,
    pub insts: u64,
    pub loads: u64,
    pub stores: u64,
    pub bytecode_loads: u64,
    /// Interp-plain instruction count divided by this row's count; `NaN` when
    /// interp-plain was not run.
    pub ratio: f64,
    pub outcome: Outcome,
    pub prints: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, config: BenchConfig) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.config == config)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,insts,loads,stores,bytecode_loads,ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                r.config, r.insts, r.loads, r.stores, r.bytecode_loads, r.ratio
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<18} {:>12} {:>10} {:>10} {:>14} {:>7}\n",
            "config", "insts", "loads", "stores", "bytecode_loads", "ratio"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<18} {:>12} {:>10} {:>10} {:>14} {:>7.3}\n",
                r.config.name(),
                r.insts,
                r.loads,
                r.stores,
                r.bytecode_loads,
                r.ratio
            ));
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{config}: {source}")]
    Specialize {
        config: BenchConfig,
        source: SpecializeError,
    },
    #[error("{config}: {source}")]
    Exec {
        config: BenchConfig,
        source: ExecError,
    },
}

/// Runs `p` with input `input` under each config using the shipped
/// interpreter.
pub fn bench(
    p: &MinProgram,
    configs: &[BenchConfig],
    input: u64,
) -> Result<BenchReport, BenchError> {
    bench_module(&interpreter_module(), p, configs, input)
}

/// Like [`bench`], with the interpreter functions taken from `m`.
pub fn bench_module(
    m: &Module,
    p: &MinProgram,
    configs: &[BenchConfig],
    input: u64,
) -> Result<BenchReport, BenchError> {
    let m = attach_program(m, p);
    let watch = ExecOptions::default().with_watch(WatchRange::new(
        BYTECODE_LABEL,
        BYTECODE_BASE,
        p.byte_len(),
    ));
    let mut rows = Vec::new();
    for &config in configs {
        let variant = config.variant();
        let (module, func) = if config.specialized() {
            let req = min_request(variant, p, "specialized");
            let (out, _) = specialize(&m, &req, &SpecializeOptions::default())
                .map_err(|source| BenchError::Specialize { config, source })?;
            (out, "specialized")
        } else {
            (polyfill_module(&m), variant.function_name())
        };
        let r = run(&module, func, &interpreter_args(input), &watch)
            .map_err(|source| BenchError::Exec { config, source })?;
        rows.push(BenchRow {
            config,
            insts: r.metrics.insts_executed,
            loads: r.metrics.loads,
            stores: r.metrics.stores,
            bytecode_loads: r.metrics.loads_in_range[BYTECODE_LABEL],
            ratio: f64::NAN,
            outcome: r.outcome,
            prints: r.metrics.prints,
        });
    }
    if let Some(base) = rows
        .iter()
        .find(|r| r.config == BenchConfig::InterpPlain)
        .map(|r| r.insts)
    {
        for r in &mut rows {
            r.ratio = base as f64 / r.insts.max(1) as f64;
        }
    }
    Ok(BenchReport { rows })
}
