//! Random structurally valid Min programs and the differential check that
//! runs them through every interpreter variant and SSA-repair mode.

use std::fmt;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::exec::{run, ExecOptions, ExecResult};
use crate::specialize::{polyfill_module, specialize, SpecializeOptions, SsaRepairMode};

use super::{assemble, build_min_module, interpreter_args, min_request, MinProgram, Variant};

/// Fuel per run; generated programs finish in a few thousand steps.
const FUZZ_FUEL: u64 = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CaseConfig {
    pub variant: Variant,
    pub mode: SsaRepairMode,
}

impl CaseConfig {
    /// Plain and state variants, each under both repair modes.
    pub fn standard() -> Vec<CaseConfig> {
        let mut out = Vec::new();
        for variant in [Variant::Plain, Variant::State] {
            for mode in [SsaRepairMode::Hsca, SsaRepairMode::Naive] {
                out.push(CaseConfig { variant, mode });
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct FuzzOptions {
    pub seed: u64,
    pub cases: usize,
    pub configs: Vec<CaseConfig>,
    /// Corrupts constant folding to check that the harness notices.
    pub break_transfer: bool,
}

impl FuzzOptions {
    pub fn new(seed: u64, cases: usize) -> Self {
        FuzzOptions {
            seed,
            cases,
            configs: CaseConfig::standard(),
            break_transfer: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuzzReport {
    pub cases: usize,
    /// Specialized-versus-interpreter comparisons performed.
    pub comparisons: usize,
}

/// First disagreement found.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub case: usize,
    pub case_seed: u64,
    pub config: Option<CaseConfig>,
    pub input: u64,
    pub detail: String,
    pub source: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "case {} (case seed {:#x}", self.case, self.case_seed)?;
        if let Some(c) = self.config {
            write!(f, ", {} with {} repair", c.variant.function_name(), c.mode)?;
        }
        writeln!(f, ", input {}): {}", self.input, self.detail)?;
        write!(f, "program:\n{}", self.source)
    }
}

/// Seed for case `index` of a run seeded with `seed`.
pub fn case_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct Gen<'a> {
    rng: &'a mut StdRng,
    out: Vec<String>,
    labels: usize,
}

impl Gen<'_> {
    fn line(&mut self, s: String) {
        self.out.push(s);
    }

    fn label(&mut self, stem: &str) -> String {
        self.labels += 1;
        format!("{}{}", stem, self.labels)
    }

    fn reg(&mut self) -> u64 {
        self.rng.random_range(0..12)
    }

    fn imm(&mut self) -> u64 {
        if self.rng.random_bool(0.8) {
            self.rng.random_range(0..20)
        } else {
            self.rng.random()
        }
    }

    fn block(&mut self, depth: usize, len: usize) {
        for _ in 0..len {
            self.stmt(depth);
        }
    }

    fn stmt(&mut self, depth: usize) {
        match self.rng.random_range(0..11) {
            0 | 1 => {
                let v = self.imm();
                self.line(format!("LOAD_IMMEDIATE {}", v));
            }
            2 => {
                let r = self.reg();
                self.line(format!("LOAD_REG {}", r));
            }
            3 => {
                // Scratch registers only: 9 holds 1 and 10.. are loop counters.
                let r = self.rng.random_range(0..9);
                self.line(format!("STORE_REG {}", r));
            }
            4 | 5 => {
                let op = ["ADD", "SUB", "MUL"][self.rng.random_range(0..3)];
                let (a, b) = (self.reg(), self.reg());
                self.line(format!("{} {} {}", op, a, b));
            }
            6 => self.line("PRINT".into()),
            7 => {
                let skip = self.label("skip");
                self.line(format!("JMPNZ {}", skip));
                let n = self.rng.random_range(1..4);
                self.block(depth, n);
                self.line(format!("{}:", skip));
            }
            8 => {
                let over = self.label("over");
                self.line(format!("JMP {}", over));
                let n = self.rng.random_range(1..3);
                self.block(depth, n);
                self.line(format!("{}:", over));
            }
            _ if depth < 2 => {
                let counter = 10 + depth;
                let top = self.label("loop");
                let trips = self.rng.random_range(1..5);
                self.line(format!("LOAD_IMMEDIATE {}", trips));
                self.line(format!("STORE_REG {}", counter));
                self.line(format!("{}:", top));
                let n = self.rng.random_range(1..5);
                self.block(depth + 1, n);
                self.line(format!("SUB {} 9", counter));
                self.line(format!("STORE_REG {}", counter));
                self.line(format!("JMPNZ {}", top));
            }
            _ => self.line("PRINT".into()),
        }
    }
}

/// Generates assembly for a terminating Min program. Loops count a dedicated
/// register down from a small trip count, nesting at most two deep.
pub fn generate_program(rng: &mut StdRng) -> String {
    let mut g = Gen {
        rng,
        out: Vec::new(),
        labels: 0,
    };
    if g.rng.random_bool(0.5) {
        g.line("STORE_REG 0".into());
    }
    g.line("LOAD_IMMEDIATE 1".into());
    g.line("STORE_REG 9".into());
    let n = g.rng.random_range(3..12);
    g.block(0, n);
    g.line("PRINT".into());
    g.line("HALT".into());
    let mut text = String::new();
    for l in g.out {
        if !l.ends_with(':') {
            text.push_str("        ");
        }
        text.push_str(&l);
        text.push('\n');
    }
    text
}

fn same(a: &ExecResult, b: &ExecResult) -> Result<(), String> {
    if a.outcome != b.outcome {
        return Err(format!("outcome {:?} vs {:?}", a.outcome, b.outcome));
    }
    if a.metrics.prints != b.metrics.prints {
        return Err(format!(
            "prints {:?} vs {:?}",
            a.metrics.prints, b.metrics.prints
        ));
    }
    Ok(())
}

/// Checks one program on each input: the polyfilled variants must agree with
/// each other, and each specialization must agree with its interpreter.
/// Returns the number of specialized runs compared.
pub fn check_program(
    p: &MinProgram,
    inputs: &[u64],
    configs: &[CaseConfig],
    break_transfer: bool,
) -> Result<usize, (Option<CaseConfig>, u64, String)> {
    let m = build_min_module(p);
    let interp = polyfill_module(&m);
    let opts = ExecOptions::default().with_fuel(FUZZ_FUEL);
    let run_interp = |v: Variant, input: u64| {
        run(&interp, v.function_name(), &interpreter_args(input), &opts)
            .map_err(|e| (None, input, format!("interpreter failed: {}", e)))
    };
    for &input in inputs {
        let plain = run_interp(Variant::Plain, input)?;
        let state = run_interp(Variant::State, input)?;
        same(&plain, &state)
            .map_err(|d| (None, input, format!("plain vs state interpreter: {}", d)))?;
    }
    let mut comparisons = 0;
    for &c in configs {
        let sopts = SpecializeOptions {
            ssa_repair: c.mode,
            break_transfer,
            ..Default::default()
        };
        let req = min_request(c.variant, p, "specialized");
        let (out, _) = specialize(&m, &req, &sopts)
            .map_err(|e| (Some(c), 0, format!("specialization failed: {}", e)))?;
        for &input in inputs {
            let want = run_interp(c.variant, input)?;
            let got = run(&out, "specialized", &interpreter_args(input), &opts)
                .map_err(|e| (Some(c), input, format!("specialized run failed: {}", e)))?;
            same(&want, &got)
                .map_err(|d| (Some(c), input, format!("interpreter vs specialized: {}", d)))?;
            comparisons += 1;
        }
    }
    Ok(comparisons)
}

fn run_case(index: usize, opts: &FuzzOptions) -> Result<usize, Divergence> {
    let seed = case_seed(opts.seed, index);
    let mut rng = StdRng::seed_from_u64(seed);
    let source = generate_program(&mut rng);
    let inputs = [0, 1, rng.random_range(2..100)];
    let diverge = |config, input, detail| Divergence {
        case: index,
        case_seed: seed,
        config,
        input,
        detail,
        source: source.clone(),
    };
    let p = assemble(&source)
        .map_err(|e| diverge(None, 0, format!("generated program rejected: {}", e)))?;
    check_program(&p, &inputs, &opts.configs, opts.break_transfer)
        .map_err(|(config, input, detail)| diverge(config, input, detail))
}

/// Runs `opts.cases` generated programs in parallel and reports the
/// lowest-numbered divergence, if any.
pub fn fuzz(opts: &FuzzOptions) -> Result<FuzzReport, Box<Divergence>> {
    let results: Vec<Result<usize, Divergence>> = (0..opts.cases)
        .into_par_iter()
        .map(|i| run_case(i, opts))
        .collect();
    let mut comparisons = 0;
    for r in results {
        comparisons += r.map_err(Box::new)?;
    }
    Ok(FuzzReport {
        cases: opts.cases,
        comparisons,
    })
}
