//! A Min extension with a four-way computed jump, `SWITCH t0 t1 t2 t3`,
//! which jumps to `t[acc]`. The interpreter arm uses `specialized_value` on
//! the accumulator so each target pc becomes a constant context.

use peval::exec::{run, ExecOptions, Outcome, WatchRange};
use peval::ir::{parse_module, validate, Module, Opcode, Terminator};
use peval::min::{
    attach_program, interpreter_args, min_request, MinProgram, Variant, BYTECODE_BASE,
    INTERPRETER_SOURCE,
};
use peval::specialize::{polyfill_module, specialize, SpecializeOptions, SsaRepairMode};

const SWITCH_ARM: &str = "\
block ^switch:
  %sw.k = intrinsic.specialized_value %acc, %zero, %three
  %sw.off = imul %sw.k, %eight
  %sw.addr = iadd %x.addr, %sw.off
  %sw.t = load.64 %sw.addr
  intrinsic.update_context %sw.t
  br ^loop(%sw.t, %acc)
";

/// The shipped interpreter with opcode 10 added to the plain variant.
fn extended_interpreter() -> Module {
    let start = INTERPRETER_SOURCE.find("func @min_plain(").unwrap();
    let end = start + INTERPRETER_SOURCE[start..].find("\n}\n").unwrap();
    let body = INTERPRETER_SOURCE[start..end]
        .replace("^halt], ^bad", "^halt, ^switch], ^bad")
        .replace("block ^bad:", &format!("{}block ^bad:", SWITCH_ARM));
    let text = format!(
        "{}{}{}",
        &INTERPRETER_SOURCE[..start],
        body,
        &INTERPRETER_SOURCE[end..]
    );
    let m = parse_module(&text).unwrap();
    assert!(validate(&m).is_empty(), "{:?}", validate(&m));
    m
}

/// `SWITCH` over four arms, each printing `100 * (k + 1)` and halting.
fn switch_program() -> MinProgram {
    let mut words = vec![10, 5, 9, 13, 17];
    for k in 1..=4u64 {
        words.extend([0, 100 * k, 8, 9]);
    }
    MinProgram::from_words(words)
}

#[test]
fn switch_arms_fold_into_target_contexts() {
    let p = switch_program();
    let m = attach_program(&extended_interpreter(), &p);
    let interp = polyfill_module(&m);
    let watch =
        ExecOptions::default().with_watch(WatchRange::new("bytecode", BYTECODE_BASE, p.byte_len()));
    for mode in [SsaRepairMode::Hsca, SsaRepairMode::Naive] {
        let opts = SpecializeOptions {
            ssa_repair: mode,
            ..Default::default()
        };
        let (out, stats) = specialize(&m, &min_request(Variant::Plain, &p, "spec"), &opts).unwrap();
        assert!(validate(&out).is_empty());
        // Entry pc, the four split arms, and the four target pcs.
        assert!(stats.contexts >= 9, "{:?}", stats);
        let f = out.function("spec").unwrap();
        let tables: Vec<usize> = f
            .blocks
            .iter()
            .filter_map(|b| match &b.term {
                Terminator::BrTable { targets, .. } => Some(targets.len()),
                _ => None,
            })
            .collect();
        assert_eq!(tables, [4], "{}", f);
        assert!(
            f.blocks
                .iter()
                .flat_map(|b| &b.insts)
                .all(|i| !matches!(i.op, Opcode::Load(_))),
            "{}",
            f
        );

        for sel in 0..4u64 {
            let want = run(&interp, "min_plain", &interpreter_args(sel), &watch).unwrap();
            let got = run(&out, "spec", &interpreter_args(sel), &watch).unwrap();
            assert_eq!(want.metrics.prints, [100 * (sel + 1)]);
            assert_eq!(
                got.metrics.prints, want.metrics.prints,
                "{:?} selector {}",
                mode, sel
            );
            assert_eq!(got.outcome, want.outcome);
            assert_eq!(got.metrics.loads_in_range["bytecode"], 0);
        }
        // A selector outside the promised range hits the split's trap.
        let r = run(&out, "spec", &interpreter_args(7), &watch).unwrap();
        assert_eq!(
            r.outcome,
            Outcome::Trap("specialized_value out of range".into())
        );
    }
}
