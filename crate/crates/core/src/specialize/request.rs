//! Specialization requests and their line-oriented file format.
//!
//! ```text
//! target @interp
//! output interp_sum
//! arg 0 memory 4096 96
//! arg 1 runtime
//! ```
//!
//! Each `target` line begins a new request. `#` and `;` start comments.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArgMode {
    RunTime,
    /// The argument is promised to equal this value.
    Const(u64),
    /// The argument is promised to equal `addr`, and `[addr, addr + len)` is
    /// promised immutable.
    Memory {
        addr: u64,
        len: u64,
    },
}

impl fmt::Display for ArgMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgMode::RunTime => f.write_str("runtime"),
            ArgMode::Const(v) => write!(f, "const {}", v),
            ArgMode::Memory { addr, len } => write!(f, "memory {} {}", addr, len),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecializationRequest {
    pub target: String,
    pub output_name: String,
    pub arg_modes: Vec<ArgMode>,
}

impl SpecializationRequest {
    pub fn new(
        target: impl Into<String>,
        output_name: impl Into<String>,
        arg_modes: Vec<ArgMode>,
    ) -> Self {
        SpecializationRequest {
            target: target.into(),
            output_name: output_name.into(),
            arg_modes,
        }
    }

    /// Renders the request in the file format accepted by [`parse_requests`].
    pub fn to_text(&self) -> String {
        let mut s = format!("target @{}\noutput {}\n", self.target, self.output_name);
        for (i, m) in self.arg_modes.iter().enumerate() {
            s.push_str(&format!("arg {} {}\n", i, m));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct RequestError {
    pub line: usize,
    pub message: String,
}

struct Partial {
    line: usize,
    target: String,
    output: Option<String>,
    args: Vec<Option<ArgMode>>,
}

impl Partial {
    fn finish(self) -> Result<SpecializationRequest, RequestError> {
        let err = |message: String| RequestError {
            line: self.line,
            message,
        };
        let output_name = self
            .output
            .clone()
            .ok_or_else(|| err(format!("request for @{} has no output line", self.target)))?;
        let arg_modes = self
            .args
            .iter()
            .enumerate()
            .map(|(i, a)| {
                a.ok_or_else(|| err(format!("request for @{} is missing arg {}", self.target, i)))
            })
            .collect::<Result<_, _>>()?;
        Ok(SpecializationRequest {
            target: self.target,
            output_name,
            arg_modes,
        })
    }
}

pub fn parse_requests(text: &str) -> Result<Vec<SpecializationRequest>, RequestError> {
    let mut out = Vec::new();
    let mut cur: Option<Partial> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| RequestError { line, message };
        let content = raw.split(['#', ';']).next().unwrap_or("");
        let words: Vec<&str> = content.split_whitespace().collect();
        let Some(&kw) = words.first() else { continue };
        let num = |s: &str| -> Result<u64, RequestError> {
            let parsed = match s.strip_prefix("0x") {
                Some(hex) => u64::from_str_radix(hex, 16),
                None => s.parse(),
            };
            parsed.map_err(|_| err(format!("invalid number '{}'", s)))
        };
        match (kw, &words[1..]) {
            ("target", [name]) => {
                if let Some(p) = cur.take() {
                    out.push(p.finish()?);
                }
                cur = Some(Partial {
                    line,
                    target: name.trim_start_matches('@').to_string(),
                    output: None,
                    args: Vec::new(),
                });
            }
            ("output", [name]) => {
                let p = cur
                    .as_mut()
                    .ok_or_else(|| err("'output' before any 'target'".into()))?;
                if p.output.is_some() {
                    return Err(err("duplicate 'output' line".into()));
                }
                p.output = Some(name.trim_start_matches('@').to_string());
            }
            ("arg", [index, mode @ ..]) => {
                let p = cur
                    .as_mut()
                    .ok_or_else(|| err("'arg' before any 'target'".into()))?;
                let i = num(index)? as usize;
                let m = match mode {
                    ["runtime"] => ArgMode::RunTime,
                    ["const", v] => ArgMode::Const(num(v)?),
                    ["memory", addr, len] => ArgMode::Memory {
                        addr: num(addr)?,
                        len: num(len)?,
                    },
                    _ => {
                        return Err(err(
                            "expected 'runtime', 'const <value>' or 'memory <addr> <len>'".into(),
                        ))
                    }
                };
                if p.args.len() <= i {
                    p.args.resize(i + 1, None);
                }
                if p.args[i].replace(m).is_some() {
                    return Err(err(format!("duplicate arg {}", i)));
                }
            }
            _ => {
                return Err(err(format!(
                    "unrecognized request line '{}'",
                    content.trim()
                )))
            }
        }
    }
    if let Some(p) = cur {
        out.push(p.finish()?);
    }
    Ok(out)
}

/// Sidecar mapping from request index to generated function name.
pub fn sidecar(requests: &[SpecializationRequest]) -> String {
    requests
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{} {} {}\n", i, r.target, r.output_name))
        .collect()
}
