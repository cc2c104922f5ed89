//! Python bindings: parse and validate modules, apply specialization
//! requests, run the reference interpreter, and drive the Min toolchain.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use peval::exec::{self, ExecOptions, Outcome, WatchRange};
use peval::ir;
use peval::min::{self, MinProgram, Variant};
use peval::specialize::{self, SpecializeOptions, SsaRepairMode};

create_exception!(peval_py, PevalError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    PevalError::new_err(e.to_string())
}

/// An IR module.
#[pyclass(name = "Module", frozen, skip_from_py_object)]
struct PyModuleIr {
    inner: ir::Module,
}

#[pymethods]
impl PyModuleIr {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        py_parse_module(text)
    }

    /// Validation diagnostics; empty when the module is well formed.
    fn validate(&self) -> Vec<String> {
        ir::validate(&self.inner)
            .iter()
            .map(|d| d.to_string())
            .collect()
    }

    fn function_names(&self) -> Vec<String> {
        self.inner
            .functions
            .iter()
            .map(|f| f.name.clone())
            .collect()
    }

    /// Copy with intrinsics replaced by ordinary loads and stores.
    fn polyfill(&self) -> Self {
        PyModuleIr {
            inner: specialize::polyfill_module(&self.inner),
        }
    }

    fn __str__(&self) -> String {
        ir::print_module(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("<Module functions={:?}>", self.function_names())
    }
}

#[pyfunction(name = "parse_module")]
fn py_parse_module(text: &str) -> PyResult<PyModuleIr> {
    ir::parse_module(text)
        .map(|inner| PyModuleIr { inner })
        .map_err(err)
}

fn repair_mode(name: &str) -> PyResult<SsaRepairMode> {
    match name {
        "hsca" => Ok(SsaRepairMode::Hsca),
        "naive" => Ok(SsaRepairMode::Naive),
        _ => Err(PyValueError::new_err(format!(
            "unknown ssa_repair '{}'",
            name
        ))),
    }
}

/// Applies every request in `requests` (request-file syntax). Returns the
/// extended module and one stats dict per request.
#[pyfunction(name = "specialize")]
#[pyo3(signature = (module, requests, ssa_repair = "hsca"))]
fn py_specialize<'py>(
    py: Python<'py>,
    module: &PyModuleIr,
    requests: &str,
    ssa_repair: &str,
) -> PyResult<(PyModuleIr, Vec<Bound<'py, PyDict>>)> {
    let reqs = specialize::parse_requests(requests).map_err(err)?;
    let opts = SpecializeOptions {
        ssa_repair: repair_mode(ssa_repair)?,
        ..Default::default()
    };
    let (inner, stats) = py
        .detach(|| specialize::specialize_all(&module.inner, &reqs, &opts))
        .map_err(err)?;
    let dicts = stats
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("contexts", s.contexts)?;
            d.set_item("output_blocks", s.output_blocks)?;
            d.set_item("output_insts", s.output_insts)?;
            d.set_item("repair_params", s.repair_params)?;
            d.set_item("cut_blocks", s.cut_blocks)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    Ok((PyModuleIr { inner }, dicts))
}

/// Runs `func` and returns a dict with `outcome` (return value or `None`),
/// `trap` (message or `None`) and the execution metrics.
#[pyfunction(name = "run")]
#[pyo3(signature = (module, func, args, watch = None, fuel = None))]
fn py_run<'py>(
    py: Python<'py>,
    module: &PyModuleIr,
    func: &str,
    args: Vec<u64>,
    watch: Option<Vec<(String, u64, u64)>>,
    fuel: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut opts = ExecOptions::default();
    if let Some(f) = fuel {
        opts = opts.with_fuel(f);
    }
    for (label, start, len) in watch.unwrap_or_default() {
        opts = opts.with_watch(WatchRange::new(label, start, len));
    }
    let r = py
        .detach(|| exec::run(&module.inner, func, &args, &opts))
        .map_err(err)?;
    let d = PyDict::new(py);
    match &r.outcome {
        Outcome::Return(v) => {
            d.set_item("outcome", v.map(|s| s.bits))?;
            d.set_item("trap", None::<String>)?;
        }
        Outcome::Trap(msg) => {
            d.set_item("outcome", None::<u64>)?;
            d.set_item("trap", msg)?;
        }
    }
    d.set_item("prints", &r.metrics.prints)?;
    d.set_item("insts_executed", r.metrics.insts_executed)?;
    d.set_item("loads", r.metrics.loads)?;
    d.set_item("stores", r.metrics.stores)?;
    d.set_item("branches", r.metrics.branches)?;
    d.set_item("loads_in_range", r.metrics.loads_in_range.clone())?;
    Ok(d)
}

fn program(text: &str) -> PyResult<MinProgram> {
    min::assemble(text).map_err(err)
}

fn variant(name: &str) -> PyResult<Variant> {
    Variant::ALL
        .into_iter()
        .find(|v| v.function_name().strip_prefix("min_") == Some(name))
        .ok_or_else(|| PyValueError::new_err(format!("unknown variant '{}'", name)))
}

/// Assembles Min source into its little-endian word image.
#[pyfunction(name = "assemble")]
fn py_assemble<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(py, &program(text)?.to_bytes()))
}

/// The shipped Min interpreter module with the program attached.
#[pyfunction(name = "min_module")]
fn py_min_module(text: &str) -> PyResult<PyModuleIr> {
    Ok(PyModuleIr {
        inner: min::build_min_module(&program(text)?),
    })
}

/// Request text specializing `variant` (`plain`, `state`, `plain_sv`,
/// `state_sv`) on the program.
#[pyfunction(name = "min_request")]
#[pyo3(signature = (text, variant = "state", output = "spec"))]
fn py_min_request(text: &str, variant: &str, output: &str) -> PyResult<String> {
    Ok(min::min_request(self::variant(variant)?, &program(text)?, output).to_text())
}

/// Four-config benchmark report as a list of row dicts.
#[pyfunction(name = "bench")]
#[pyo3(signature = (text, input = 0))]
fn py_bench<'py>(py: Python<'py>, text: &str, input: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let p = program(text)?;
    let report = py
        .detach(|| min::bench(&p, &min::BenchConfig::ALL, input))
        .map_err(err)?;
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("config", r.config.name())?;
            d.set_item("insts", r.insts)?;
            d.set_item("loads", r.loads)?;
            d.set_item("stores", r.stores)?;
            d.set_item("bytecode_loads", r.bytecode_loads)?;
            d.set_item("ratio", r.ratio)?;
            d.set_item("prints", &r.prints)?;
            Ok(d)
        })
        .collect()
}

/// Differential fuzzing; returns `(cases, comparisons)` or raises with the
/// first divergence.
#[pyfunction(name = "fuzz")]
#[pyo3(signature = (seed = 1, cases = 100))]
fn py_fuzz(py: Python<'_>, seed: u64, cases: usize) -> PyResult<(usize, usize)> {
    let opts = min::FuzzOptions::new(seed, cases);
    py.detach(|| min::fuzz(&opts))
        .map(|r| (r.cases, r.comparisons))
        .map_err(err)
}

#[pymodule]
fn peval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PevalError", m.py().get_type::<PevalError>())?;
    m.add_class::<PyModuleIr>()?;
    m.add_function(wrap_pyfunction!(py_parse_module, m)?)?;
    m.add_function(wrap_pyfunction!(py_specialize, m)?)?;
    m.add_function(wrap_pyfunction!(py_run, m)?)?;
    m.add_function(wrap_pyfunction!(py_assemble, m)?)?;
    m.add_function(wrap_pyfunction!(py_min_module, m)?)?;
    m.add_function(wrap_pyfunction!(py_min_request, m)?)?;
    m.add_function(wrap_pyfunction!(py_bench, m)?)?;
    m.add_function(wrap_pyfunction!(py_fuzz, m)?)?;
    Ok(())
}
