//! End-to-end acceptance checks over the Min benchmark suite. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::time::{Duration, Instant};

use peval::exec::{run, ExecOptions, ExecResult, WatchRange};
use peval::ir::{parse_module, validate, Opcode};
use peval::min::{
    self, assemble, bench, build_min_module, generate_program, interpreter_args, min_request,
    sum_program, BenchConfig, FuzzOptions, MinProgram, Variant, BYTECODE_BASE, BYTECODE_LABEL,
};
use peval::specialize::{
    opcode_multiset, polyfill_module, specialize, specialize_function, SpecializeError,
    SpecializeOptions, SsaRepairMode,
};
use rand::rngs::StdRng;
use rand::SeedableRng;

mod common;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn watch(p: &MinProgram) -> ExecOptions {
    ExecOptions::default().with_watch(WatchRange::new(BYTECODE_LABEL, BYTECODE_BASE, p.byte_len()))
}

fn interp(p: &MinProgram, v: Variant, input: u64) -> ExecResult {
    let m = polyfill_module(&build_min_module(p));
    run(&m, v.function_name(), &interpreter_args(input), &watch(p)).unwrap()
}

fn specialized(
    p: &MinProgram,
    v: Variant,
    mode: SsaRepairMode,
    input: u64,
) -> Result<ExecResult, String> {
    let opts = SpecializeOptions {
        ssa_repair: mode,
        ..Default::default()
    };
    let (out, _) = specialize(&build_min_module(p), &min_request(v, p, "spec"), &opts)
        .map_err(|e| e.to_string())?;
    run(&out, "spec", &interpreter_args(input), &watch(p)).map_err(|e| e.to_string())
}

/// Suite programs with the input each one is run on.
fn suite() -> Vec<(&'static str, MinProgram, u64)> {
    min::suite()
        .into_iter()
        .map(|(name, p)| {
            let input = match name {
                "countdown" => 7,
                "switch4" => 2,
                _ => 0,
            };
            (name, p, input)
        })
        .collect()
}

fn erasure() -> Check {
    let start = Instant::now();
    for (name, p, input) in suite() {
        for v in Variant::ALL {
            let want = interp(&p, v, input);
            let got = specialized(&p, v, SsaRepairMode::Hsca, input)?;
            ensure(got.metrics.loads_in_range[BYTECODE_LABEL] == 0, || {
                format!(
                    "{} {:?}: {} bytecode loads",
                    name, v, got.metrics.loads_in_range[BYTECODE_LABEL]
                )
            })?;
            ensure(want.metrics.prints == got.metrics.prints, || {
                format!("{} {:?}: prints differ", name, v)
            })?;
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(10), || format!("took {:?}", t))?;
    Ok(format!(
        "{} programs x {} variants, 0 bytecode loads, {:.2?}",
        suite().len(),
        Variant::ALL.len(),
        t
    ))
}

fn preservation() -> Check {
    let start = Instant::now();
    let report = min::fuzz(&FuzzOptions::new(2024, 500)).map_err(|d| d.to_string())?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(120), || format!("took {:?}", t))?;
    Ok(format!(
        "{} programs, {} comparisons, {:.2?}",
        report.cases, report.comparisons, t
    ))
}

fn dispatch_overhead() -> Check {
    let p = assemble(&sum_program(100_000)).unwrap();
    let report = bench(
        &p,
        &[BenchConfig::InterpPlain, BenchConfig::SpecializedPlain],
        0,
    )
    .map_err(|e| e.to_string())?;
    let row = report.row(BenchConfig::SpecializedPlain).unwrap();
    let base = report.row(BenchConfig::InterpPlain).unwrap();
    ensure(
        row.prints == [5_000_050_000] && base.prints == row.prints,
        || "wrong sum".into(),
    )?;
    ensure(row.ratio >= 1.5, || format!("ratio {:.3}", row.ratio))?;
    Ok(format!(
        "{} vs {} instructions, ratio {:.3}",
        base.insts, row.insts, row.ratio
    ))
}

fn state_elision() -> Check {
    let (mut plain_total, mut state_total) = (0, 0);
    for (name, p, input) in suite() {
        let report = bench(
            &p,
            &[BenchConfig::SpecializedPlain, BenchConfig::SpecializedState],
            input,
        )
        .map_err(|e| e.to_string())?;
        let plain = report.row(BenchConfig::SpecializedPlain).unwrap();
        let state = report.row(BenchConfig::SpecializedState).unwrap();
        let (a, b) = (plain.loads + plain.stores, state.loads + state.stores);
        ensure(b < a, || format!("{}: state {} vs plain {}", name, b, a))?;
        plain_total += a;
        state_total += b;
    }
    let p = assemble(include_str!("../src/min/programs/add.min")).unwrap();
    let (out, _) = specialize(
        &build_min_module(&p),
        &min_request(Variant::State, &p, "spec"),
        &SpecializeOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let f = out.function("spec").unwrap();
    let mem = f
        .blocks
        .iter()
        .flat_map(|b| &b.insts)
        .filter(|i| matches!(i.op, Opcode::Load(_) | Opcode::Store(_)))
        .count();
    ensure(mem == 0, || {
        format!("ADD microprogram body has {} memory operations", mem)
    })?;
    Ok(format!(
        "state below plain on all {} programs ({} vs {} dynamic loads+stores in total); ADD body has 0 memory ops",
        suite().len(),
        state_total,
        plain_total
    ))
}

fn moap() -> Check {
    let p = assemble(&sum_program(100)).unwrap();
    for v in [Variant::Plain, Variant::State] {
        let m = polyfill_module(&build_min_module(&p));
        let (out, _) = specialize(
            &m,
            &min_request(v, &p, "spec"),
            &SpecializeOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let got = opcode_multiset(out.function("spec").unwrap());
        let want = opcode_multiset(m.function(v.function_name()).unwrap());
        ensure(got == want, || {
            format!("{:?}: multiset differs\n{:?}\n{:?}", v, got, want)
        })?;
        let r = run(&out, "spec", &interpreter_args(0), &watch(&p)).unwrap();
        ensure(r.metrics.loads_in_range[BYTECODE_LABEL] > 0, || {
            format!("{:?}: no bytecode loads", v)
        })?;
    }
    Ok(
        "polyfilled plain and state interpreters specialize to copies that still load bytecode"
            .into(),
    )
}

fn context_soundness() -> Check {
    // 100 checked runs on the plain variants, whose contexts carry no other
    // obligations.
    for i in 0..100u64 {
        let mut rng = StdRng::seed_from_u64(0xC0FFEE + i);
        let src = generate_program(&mut rng);
        let p = assemble(&src).unwrap();
        let v = [Variant::Plain, Variant::PlainSv][i as usize % 2];
        let m = common::randomize_contexts(&build_min_module(&p), v.function_name(), &mut rng);
        let (out, _) = specialize(
            &m,
            &min_request(v, &p, "spec"),
            &SpecializeOptions::default(),
        )
        .map_err(|e| format!("run {}: {}", i, e))?;
        let base = polyfill_module(&m);
        for input in [0, 1, 9] {
            let want = run(
                &base,
                v.function_name(),
                &interpreter_args(input),
                &ExecOptions::default(),
            )
            .unwrap();
            let got = run(
                &out,
                "spec",
                &interpreter_args(input),
                &ExecOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            ensure(
                want.outcome == got.outcome && want.metrics.prints == got.metrics.prints,
                || format!("run {} ({:?}, input {}) diverges\n{}", i, v, input, src),
            )?;
        }
    }
    // The state variants additionally need constant register indices, which
    // merged contexts can break; those runs must fail cleanly or agree.
    let (mut agreed, mut rejected) = (0, 0);
    for i in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(0xBEEF + i);
        let p = assemble(&generate_program(&mut rng)).unwrap();
        let v = [Variant::State, Variant::StateSv][i as usize % 2];
        let m = common::randomize_contexts(&build_min_module(&p), v.function_name(), &mut rng);
        match specialize(
            &m,
            &min_request(v, &p, "spec"),
            &SpecializeOptions::default(),
        ) {
            Ok((out, _)) => {
                let base = polyfill_module(&m);
                let want = run(
                    &base,
                    v.function_name(),
                    &interpreter_args(4),
                    &ExecOptions::default(),
                )
                .unwrap();
                let got = run(&out, "spec", &interpreter_args(4), &ExecOptions::default())
                    .map_err(|e| e.to_string())?;
                ensure(
                    want.outcome == got.outcome && want.metrics.prints == got.metrics.prints,
                    || format!("state run {} diverges", i),
                )?;
                agreed += 1;
            }
            Err(SpecializeError::NonConstOperand { .. }) => rejected += 1,
            Err(e) => return Err(format!("state run {}: {}", i, e)),
        }
    }
    Ok(format!(
        "100 plain-variant runs equivalent; state variants: {} equivalent, {} rejected for a non-constant register index",
        agreed, rejected
    ))
}

fn repair_quality() -> Check {
    let (mut hsca_total, mut naive_total) = (0, 0);
    for (name, p, input) in suite() {
        for v in Variant::ALL {
            let m = build_min_module(&p);
            let req = min_request(v, &p, "spec");
            let h = specialize_function(&m, &req, &SpecializeOptions::default())
                .map_err(|e| e.to_string())?;
            let naive = SpecializeOptions {
                ssa_repair: SsaRepairMode::Naive,
                ..Default::default()
            };
            let n = specialize_function(&m, &req, &naive).map_err(|e| e.to_string())?;
            ensure(h.stats.repair_params <= n.stats.repair_params, || {
                format!(
                    "{} {:?}: hsca {} > naive {}",
                    name, v, h.stats.repair_params, n.stats.repair_params
                )
            })?;
            ensure(
                h.stats.output_block_params <= n.stats.output_block_params,
                || {
                    format!(
                        "{} {:?}: output params {} > {}",
                        name, v, h.stats.output_block_params, n.stats.output_block_params
                    )
                },
            )?;
            let a = specialized(&p, v, SsaRepairMode::Hsca, input)?;
            let b = specialized(&p, v, SsaRepairMode::Naive, input)?;
            ensure(
                a.outcome == b.outcome && a.metrics.prints == b.metrics.prints,
                || format!("{} {:?}: modes differ", name, v),
            )?;
            hsca_total += h.stats.repair_params;
            naive_total += n.stats.repair_params;
        }
    }
    Ok(format!(
        "repair params hsca {} vs naive {} (naive/hsca = {:.2})",
        hsca_total,
        naive_total,
        naive_total as f64 / hsca_total.max(1) as f64
    ))
}

fn value_specialization() -> Check {
    let p = assemble(include_str!("../src/min/programs/switch4.min")).unwrap();
    for (two, sv) in [
        (Variant::Plain, Variant::PlainSv),
        (Variant::State, Variant::StateSv),
    ] {
        for sel in 0..4 {
            for mode in [SsaRepairMode::Hsca, SsaRepairMode::Naive] {
                let a = specialized(&p, two, mode, sel)?;
                let b = specialized(&p, sv, mode, sel)?;
                let want = interp(&p, two, sel);
                ensure(
                    a.outcome == b.outcome && a.metrics.prints == b.metrics.prints,
                    || format!("{:?} vs {:?} differ on selector {}", two, sv, sel),
                )?;
                ensure(want.metrics.prints == b.metrics.prints, || {
                    format!("selector {} differs from interpreter", sel)
                })?;
                ensure(b.metrics.prints == [100 * (sel + 1)], || {
                    format!("selector {} printed {:?}", sel, b.metrics.prints)
                })?;
            }
        }
    }
    Ok("specialized_value JMPNZ matches two-backedge JMPNZ on selectors 0-3".into())
}

fn limits() -> Check {
    let mut slowest = Duration::ZERO;
    for (name, p, _) in suite() {
        for v in Variant::ALL {
            let start = Instant::now();
            specialize_function(
                &build_min_module(&p),
                &min_request(v, &p, "spec"),
                &SpecializeOptions::default(),
            )
            .map_err(|e| format!("{} {:?}: {}", name, v, e))?;
            let t = start.elapsed();
            ensure(t < Duration::from_secs(5), || {
                format!("{} {:?} took {:?}", name, v, t)
            })?;
            slowest = slowest.max(t);
        }
    }
    let crafted = parse_module(
        "memory 16
func @f(%program: i64, %input: i64) -> i64 {
block ^entry:
  %zero = const.i64 0
  intrinsic.push_context %zero
  br ^loop(%input)
block ^loop(%x: i64):
  %one = const.i64 1
  %y = iadd %x, %one
  intrinsic.update_context %y
  br ^loop(%y)
}
",
    )
    .unwrap();
    ensure(validate(&crafted).is_empty(), || {
        "crafted module invalid".into()
    })?;
    let req = peval::specialize::SpecializationRequest::new(
        "f",
        "spec",
        vec![
            peval::specialize::ArgMode::RunTime,
            peval::specialize::ArgMode::RunTime,
        ],
    );
    match specialize(&crafted, &req, &SpecializeOptions::default()) {
        Err(SpecializeError::NonConstContext { location, .. }) => Ok(format!(
            "suite within ceilings (slowest {:.2?}); crafted module: NonConstContext at {}",
            slowest, location
        )),
        other => Err(format!("crafted module gave {:?}", other.map(|_| ()))),
    }
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 9] = [
        ("bytecode erasure", erasure),
        ("semantic preservation", preservation),
        ("dispatch overhead removal", dispatch_overhead),
        ("state intrinsic elision", state_elision),
        ("degeneration without contexts", moap),
        ("context soundness", context_soundness),
        ("SSA repair quality", repair_quality),
        ("value specialization", value_specialization),
        ("termination and limits", limits),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} ({}): PASS - {}", i + 1, name, detail),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({}): FAIL - {}", i + 1, name, detail);
            }
        }
    }
    if failed > 0 {
        println!("{} of {} criteria failed", failed, criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
