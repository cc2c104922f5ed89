use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SUM: &str = include_str!("../../core/src/min/programs/sum.min");

fn peval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peval"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Assembles the sum program and writes module, request and word image.
fn sum_setup(dir: &TempDir) -> (PathBuf, PathBuf) {
    let src = dir.path().join("sum.min");
    fs::write(&src, SUM).unwrap();
    let module = dir.path().join("sum.ir");
    let req = dir.path().join("sum.req");
    let bin = dir.path().join("sum.bin");
    let o = peval(&[
        "asm",
        s(&src),
        "-o",
        s(&bin),
        "--module",
        s(&module),
        "--request",
        s(&req),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (module, req)
}

fn metric(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{}: ", key)))
        .unwrap_or_else(|| panic!("no {} in\n{}", key, out))
        .to_string()
}

#[test]
fn validate_exit_codes() {
    let dir = TempDir::new().unwrap();
    let good = dir.path().join("good.ir");
    fs::write(
        &good,
        "func @f() -> i64 {\nblock ^e:\n  %x = const.i64 5\n  return %x\n}\n",
    )
    .unwrap();
    assert_eq!(code(&peval(&["validate", s(&good)])), 0);

    let bad = dir.path().join("bad.ir");
    let text = "\
func @f(%c: i32) -> i64 {
block ^e:
  br_if %c, ^a, ^b
block ^a:
  %x = const.i64 1
  br ^b
block ^b:
  return %x
}
";
    fs::write(&bad, text).unwrap();
    let o = peval(&["validate", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("@f"), "{}", stderr(&o));

    assert_eq!(
        code(&peval(&["validate", s(&dir.path().join("missing.ir"))])),
        2
    );
}

#[test]
fn specialize_and_run_min_sum() {
    let dir = TempDir::new().unwrap();
    let (module, req) = sum_setup(&dir);
    let out = dir.path().join("out.ir");
    let o = peval(&["specialize", s(&module), s(&req), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&peval(&["validate", s(&out)])), 0);
    let map = fs::read_to_string(dir.path().join("out.ir.map")).unwrap();
    assert_eq!(map, "0 min_state min_state_spec\n");

    let o = peval(&[
        "run",
        s(&out),
        "min_state_spec",
        "4096",
        "0",
        "--watch",
        "bytecode",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(metric(&text, "outcome"), "return 500500");
    assert_eq!(metric(&text, "prints"), "500500");
    assert_eq!(metric(&text, "loads_in_range[bytecode]"), "0");

    // An explicit range works the same as the segment label.
    let o = peval(&[
        "run",
        s(&out),
        "min_state_spec",
        "4096",
        "0",
        "--watch",
        "code=4096:224",
    ]);
    assert_eq!(metric(&stdout(&o), "loads_in_range[code]"), "0");
}

#[test]
fn naive_repair_matches_hsca() {
    let dir = TempDir::new().unwrap();
    let (module, req) = sum_setup(&dir);
    let mut results = Vec::new();
    for mode in ["hsca", "naive"] {
        let out = dir.path().join(format!("{}.ir", mode));
        let o = peval(&[
            "specialize",
            s(&module),
            s(&req),
            "-o",
            s(&out),
            "--ssa-repair",
            mode,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = peval(&["run", s(&out), "min_state_spec", "4096", "7"]);
        let text = stdout(&o);
        results.push((metric(&text, "outcome"), metric(&text, "prints")));
    }
    assert_eq!(results[0], results[1]);
}

#[test]
fn specialize_missing_function_fails() {
    let dir = TempDir::new().unwrap();
    let (module, _) = sum_setup(&dir);
    let req = dir.path().join("bad.req");
    fs::write(&req, "target @nope\noutput x\n").unwrap();
    let o = peval(&[
        "specialize",
        s(&module),
        s(&req),
        "-o",
        s(&dir.path().join("o.ir")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn specialize_error_names_location() {
    let dir = TempDir::new().unwrap();
    let module = dir.path().join("m.ir");
    let text = "\
func @f(%x: i64) -> i64 {
block ^e:
  intrinsic.update_context %x
  return %x
}
";
    fs::write(&module, text).unwrap();
    let req = dir.path().join("r.req");
    fs::write(&req, "target @f\noutput g\narg 0 runtime\n").unwrap();
    let o = peval(&[
        "specialize",
        s(&module),
        s(&req),
        "-o",
        s(&dir.path().join("o.ir")),
    ]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("@f") && err.contains("^e"), "{}", err);
}

#[test]
fn run_traps_and_usage_errors() {
    let dir = TempDir::new().unwrap();
    let (module, _) = sum_setup(&dir);
    let o = peval(&[
        "run",
        s(&module),
        "min_plain",
        "4096",
        "0",
        "--polyfill",
        "--fuel",
        "10",
    ]);
    assert_eq!(code(&o), 3);
    assert_eq!(metric(&stdout(&o), "outcome"), "trap out of fuel");

    assert_eq!(
        code(&peval(&[
            "run",
            s(&module),
            "min_plain",
            "4096",
            "--polyfill"
        ])),
        2
    );
    assert_eq!(
        code(&peval(&[
            "run",
            s(&module),
            "min_plain",
            "x",
            "0",
            "--polyfill"
        ])),
        2
    );
    assert_eq!(
        code(&peval(&["run", s(&module), "min_plain", "--frobnicate"])),
        2
    );
    // Intrinsics must be polyfilled first.
    assert_eq!(
        code(&peval(&["run", s(&module), "min_state", "4096", "0"])),
        1
    );
}

#[test]
fn bench_reports_four_configs() {
    let dir = TempDir::new().unwrap();
    let (module, _) = sum_setup(&dir);
    let src = dir.path().join("sum.min");
    let o = peval(&["bench", s(&module), s(&src), "--csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "config,insts,loads,stores,bytecode_loads,ratio");
    assert_eq!(lines.len(), 5);
    let row = |name: &str| -> Vec<String> {
        lines
            .iter()
            .find(|l| l.starts_with(&format!("{},", name)))
            .unwrap()
            .split(',')
            .map(String::from)
            .collect()
    };
    assert_eq!(row("specialized-plain")[4], "0");
    assert_eq!(row("specialized-state")[4], "0");
    let ratio: f64 = row("specialized-plain")[5].parse().unwrap();
    assert!(ratio >= 1.5, "{}", ratio);
}

#[test]
fn asm_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let src = dir.path().join("sum.min");
    fs::write(&src, SUM).unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    assert_eq!(code(&peval(&["asm", s(&src), "-o", s(&a)])), 0);
    assert_eq!(code(&peval(&["asm", s(&src), "-o", s(&b)])), 0);
    let (x, y) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(x, y);
    assert_eq!(x.len() % 8, 0);
    assert_eq!(u64::from_le_bytes(x[..8].try_into().unwrap()), 0);

    let bad = dir.path().join("bad.min");
    fs::write(&bad, "FROB 1\nHALT\n").unwrap();
    let o = peval(&["asm", s(&bad), "-o", s(&a)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn fuzz_agrees() {
    let o = peval(&["fuzz", "--cases", "100", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("no divergence"));
}

#[test]
fn fuzz_detects_broken_transfer() {
    let o = peval(&["fuzz", "--cases", "20", "--seed", "1", "--break-transfer"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("repro: peval fuzz --seed 1"), "{}", err);
    assert!(err.contains("program:"), "{}", err);
}

#[test]
fn fuzz_is_deterministic() {
    let a = peval(&["fuzz", "--cases", "10", "--seed", "42"]);
    let b = peval(&["fuzz", "--cases", "10", "--seed", "42"]);
    assert_eq!(stdout(&a), stdout(&b));
}
