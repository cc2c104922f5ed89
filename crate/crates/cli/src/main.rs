use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _};
use clap::{Parser, Subcommand, ValueEnum};

use peval::exec::{run, ExecError, ExecOptions, Outcome, WatchRange, DEFAULT_FUEL};
use peval::ir::{parse_module, print_module, validate, Module};
use peval::min::{
    assemble, attach_program, bench_module, fuzz, interpreter_module, min_request, BenchConfig,
    FuzzOptions, MinProgram, Variant,
};
use peval::specialize::{
    parse_requests, polyfill_module, sidecar, specialize_all, SpecializeOptions, SsaRepairMode,
};

/// Partial evaluator for an SSA IR: specializes interpreters on constant
/// bytecode and runs the result.
#[derive(Parser, Debug)]
#[command(name = "peval", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate a module; prints diagnostics.
    Validate { module: PathBuf },
    /// Apply the requests in a request file and write the extended module.
    Specialize {
        module: PathBuf,
        requests: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Where to write the request-to-function mapping [default: OUTPUT.map]
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Repair::Hsca)]
        ssa_repair: Repair,
        #[arg(long, default_value_t = 100_000)]
        max_contexts: usize,
        #[arg(long, default_value_t = 1000)]
        max_rebuilds: usize,
    },
    /// Execute a function with the reference interpreter and print metrics.
    Run {
        module: PathBuf,
        func: String,
        args: Vec<String>,
        /// `name=start:len`, or the label of a data segment.
        #[arg(long)]
        watch: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
        /// Replace intrinsics with plain loads and stores before running.
        #[arg(long)]
        polyfill: bool,
    },
    /// Compare interpreted and specialized execution of a Min program.
    Bench {
        /// Module holding the Min interpreter functions.
        module: PathBuf,
        program: PathBuf,
        #[arg(long, default_value_t = 0)]
        input: u64,
        #[arg(long)]
        csv: bool,
    },
    /// Assemble a Min program into a little-endian word image.
    Asm {
        program: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the interpreter module with the program attached.
        #[arg(long)]
        module: Option<PathBuf>,
        /// Also write a request specializing VARIANT on the program.
        #[arg(long)]
        request: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MinVariant::State)]
        variant: MinVariant,
    },
    /// Differential fuzzing of generated Min programs.
    Fuzz {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, hide = true)]
        break_transfer: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Repair {
    Hsca,
    Naive,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MinVariant {
    Plain,
    State,
    PlainSv,
    StateSv,
}

impl From<MinVariant> for Variant {
    fn from(v: MinVariant) -> Variant {
        match v {
            MinVariant::Plain => Variant::Plain,
            MinVariant::State => Variant::State,
            MinVariant::PlainSv => Variant::PlainSv,
            MinVariant::StateSv => Variant::StateSv,
        }
    }
}

/// A failure tagged with its exit code: 1 semantic, 2 usage or I/O, 3 trap.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn semantic(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: e.into(),
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: e.into(),
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(usage)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(usage)
}

fn load_module(path: &Path) -> Result<Module, Failure> {
    let text = read(path)?;
    parse_module(&text).map_err(|e| semantic(anyhow!("{}:{}", path.display(), e)))
}

fn load_program(path: &Path) -> Result<MinProgram, Failure> {
    let text = read(path)?;
    assemble(&text).map_err(|e| semantic(anyhow!("{}: {}", path.display(), e)))
}

fn parse_u64(s: &str) -> Option<u64> {
    match s.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16).ok(),
        None => s
            .parse()
            .ok()
            .or_else(|| s.parse::<i64>().ok().map(|v| v as u64)),
    }
}

fn parse_watch(spec: &str, m: &Module) -> Result<WatchRange, Failure> {
    if let Some((name, range)) = spec.split_once('=') {
        let (start, len) = range
            .split_once(':')
            .and_then(|(a, b)| Some((parse_u64(a)?, parse_u64(b)?)))
            .ok_or_else(|| {
                usage(anyhow!(
                    "bad watch range '{}', expected name=start:len",
                    spec
                ))
            })?;
        return Ok(WatchRange::new(name, start, len));
    }
    let seg = m
        .memory
        .segment_by_label(spec)
        .ok_or_else(|| usage(anyhow!("no data segment labelled '{}'", spec)))?;
    Ok(WatchRange::new(spec, seg.offset, seg.bytes.len() as u64))
}

fn cmd_validate(path: &Path) -> CmdResult {
    let m = load_module(path)?;
    let diags = validate(&m);
    if diags.is_empty() {
        println!("{}: ok ({} functions)", path.display(), m.functions.len());
        return Ok(ExitCode::SUCCESS);
    }
    for d in &diags {
        eprintln!("{}: {}", path.display(), d);
    }
    Err(semantic(anyhow!("{} diagnostic(s)", diags.len())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_specialize(
    module: &Path,
    requests: &Path,
    output: &Path,
    sidecar_path: Option<PathBuf>,
    repair: Repair,
    max_contexts: usize,
    max_rebuilds: usize,
) -> CmdResult {
    let m = load_module(module)?;
    let reqs = parse_requests(&read(requests)?)
        .map_err(|e| semantic(anyhow!("{}: {}", requests.display(), e)))?;
    let opts = SpecializeOptions {
        ssa_repair: match repair {
            Repair::Hsca => SsaRepairMode::Hsca,
            Repair::Naive => SsaRepairMode::Naive,
        },
        max_contexts,
        max_rebuilds,
        ..Default::default()
    };
    let (out, stats) = specialize_all(&m, &reqs, &opts).map_err(semantic)?;
    let diags = validate(&out);
    if !diags.is_empty() {
        for d in &diags {
            eprintln!("output: {}", d);
        }
        return Err(semantic(anyhow!("specialized module does not validate")));
    }
    write(output, print_module(&out))?;
    let sidecar_path = sidecar_path.unwrap_or_else(|| {
        let mut p = output.as_os_str().to_owned();
        p.push(".map");
        PathBuf::from(p)
    });
    write(&sidecar_path, sidecar(&reqs))?;
    for (r, s) in reqs.iter().zip(&stats) {
        println!(
            "@{} -> @{}: {} contexts, {} blocks, {} insts, {} repair params",
            r.target, r.output_name, s.contexts, s.output_blocks, s.output_insts, s.repair_params
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(
    module: &Path,
    func: &str,
    args: &[String],
    watch: &[String],
    fuel: u64,
    polyfill: bool,
) -> CmdResult {
    let mut m = load_module(module)?;
    if polyfill {
        m = polyfill_module(&m);
    }
    let args = args
        .iter()
        .map(|a| parse_u64(a).ok_or_else(|| usage(anyhow!("bad argument '{}'", a))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut opts = ExecOptions::default().with_fuel(fuel);
    for w in watch {
        opts = opts.with_watch(parse_watch(w, &m)?);
    }
    let r = run(&m, func, &args, &opts).map_err(|e| match e {
        ExecError::ArgCount { .. } | ExecError::UnknownFunction(_) => usage(e),
        _ => semantic(e),
    })?;
    let mut report = String::new();
    match &r.outcome {
        Outcome::Return(Some(v)) => writeln!(report, "outcome: return {}", v.bits),
        Outcome::Return(None) => writeln!(report, "outcome: return"),
        Outcome::Trap(msg) => writeln!(report, "outcome: trap {}", msg),
    }
    .ok();
    let prints: Vec<String> = r.metrics.prints.iter().map(|p| p.to_string()).collect();
    writeln!(report, "prints: {}", prints.join(" ")).ok();
    writeln!(report, "insts_executed: {}", r.metrics.insts_executed).ok();
    writeln!(report, "loads: {}", r.metrics.loads).ok();
    writeln!(report, "stores: {}", r.metrics.stores).ok();
    writeln!(report, "branches: {}", r.metrics.branches).ok();
    for (label, n) in &r.metrics.loads_in_range {
        writeln!(report, "loads_in_range[{}]: {}", label, n).ok();
    }
    print!("{}", report);
    Ok(if r.outcome.is_trap() {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_bench(module: &Path, program: &Path, input: u64, csv: bool) -> CmdResult {
    let m = load_module(module)?;
    let p = load_program(program)?;
    let report = bench_module(&m, &p, &BenchConfig::ALL, input).map_err(semantic)?;
    if csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_text());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_asm(
    program: &Path,
    output: &Path,
    module: Option<&Path>,
    request: Option<&Path>,
    variant: MinVariant,
) -> CmdResult {
    let p = load_program(program)?;
    write(output, p.to_bytes())?;
    if let Some(path) = module {
        write(
            path,
            print_module(&attach_program(&interpreter_module(), &p)),
        )?;
    }
    if let Some(path) = request {
        let v = Variant::from(variant);
        let name = format!("{}_spec", v.function_name());
        write(path, min_request(v, &p, &name).to_text())?;
    }
    println!("{}: {} words", output.display(), p.words.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_fuzz(seed: u64, cases: usize, break_transfer: bool) -> CmdResult {
    let mut opts = FuzzOptions::new(seed, cases);
    opts.break_transfer = break_transfer;
    match fuzz(&opts) {
        Ok(r) => {
            println!(
                "{} cases, {} comparisons, no divergence",
                r.cases, r.comparisons
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(d) => {
            eprintln!("divergence in {}", d);
            eprintln!("repro: peval fuzz --seed {} --cases {}", seed, d.case + 1);
            Err(semantic(anyhow!("fuzzing found a divergence")))
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Validate { module } => cmd_validate(&module),
        Command::Specialize {
            module,
            requests,
            output,
            sidecar,
            ssa_repair,
            max_contexts,
            max_rebuilds,
        } => cmd_specialize(
            &module,
            &requests,
            &output,
            sidecar,
            ssa_repair,
            max_contexts,
            max_rebuilds,
        ),
        Command::Run {
            module,
            func,
            args,
            watch,
            fuel,
            polyfill,
        } => cmd_run(&module, &func, &args, &watch, fuel, polyfill),
        Command::Bench {
            module,
            program,
            input,
            csv,
        } => cmd_bench(&module, &program, input, csv),
        Command::Asm {
            program,
            output,
            module,
            request,
            variant,
        } => cmd_asm(
            &program,
            &output,
            module.as_deref(),
            request.as_deref(),
            variant,
        ),
        Command::Fuzz {
            seed,
            cases,
            break_transfer,
        } => cmd_fuzz(seed, cases, break_transfer),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
