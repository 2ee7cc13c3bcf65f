//! Plain-text ranker checkpoints.
//!
//! ```text
//! # fairexp checkpoint v1
//! dimension <d>
//! lambda <λ>
//! norm_bound <Q>
//! round <t>
//! theta <θ_1> ... <θ_d>
//! matrix <row 1 of M>
//! ...                      (d rows)
//! pairs <n>
//! <label> <x_1> ... <x_d>  (n rows, label 0 or 1)
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! checkpoint re-reads to a bit-identical state.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use super::{RankerState, TrainingPair};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "# fairexp checkpoint v1";

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_checkpoint<W: Write>(state: &RankerState, mut out: W) -> Result<()> {
    let d = state.dimension();
    writeln!(out, "{CHECKPOINT_VERSION}")?;
    writeln!(out, "dimension {d}")?;
    writeln!(out, "lambda {}", state.lambda())?;
    writeln!(out, "norm_bound {}", state.norm_bound())?;
    writeln!(out, "round {}", state.round())?;
    writeln!(out, "theta {}", join(state.theta()))?;
    let m = state.info_matrix();
    for r in 0..d {
        let row: Vec<f64> = (0..d).map(|c| m[(r, c)]).collect();
        writeln!(out, "matrix {}", join(&row))?;
    }
    writeln!(out, "pairs {}", state.num_pairs())?;
    for (x, y) in state.pairs() {
        writeln!(out, "{} {}", u8::from(y), join(x))?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    lineno: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        self.lineno += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(Error::Checkpoint(format!("unexpected end of file at line {}", self.lineno))),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<String> {
        let line = self.next_line()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| {
                Error::Checkpoint(format!("line {}: expected '{key} ...'", self.lineno))
            })
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.lineno))
    }
}

fn parse_floats(text: &str, expected: usize, lines: &Lines<impl BufRead>) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| lines.err(format!("bad number '{t}'"))))
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(lines.err(format!("expected {expected} values, found {}", values.len())));
    }
    Ok(values)
}

pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<RankerState> {
    let mut lines = Lines {
        inner: reader.lines(),
        lineno: 0,
    };
    let header = lines.next_line()?;
    if header.trim_end() != CHECKPOINT_VERSION {
        return Err(lines.err(format!("unsupported header '{header}'")));
    }
    let d: usize = lines
        .keyed("dimension")?
        .trim()
        .parse()
        .map_err(|_| lines.err("bad dimension"))?;
    let lambda = parse_floats(&lines.keyed("lambda")?, 1, &lines)?[0];
    let norm_bound = parse_floats(&lines.keyed("norm_bound")?, 1, &lines)?[0];
    let round: u64 = lines
        .keyed("round")?
        .trim()
        .parse()
        .map_err(|_| lines.err("bad round"))?;
    let theta = parse_floats(&lines.keyed("theta")?, d, &lines)?;
    let mut m = DMatrix::zeros(d, d);
    for r in 0..d {
        let row = parse_floats(&lines.keyed("matrix")?, d, &lines)?;
        for (c, v) in row.into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    let n: usize = lines
        .keyed("pairs")?
        .trim()
        .parse()
        .map_err(|_| lines.err("bad pair count"))?;
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines.next_line()?;
        let (label, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
        let label = match label {
            "0" => false,
            "1" => true,
            other => return Err(lines.err(format!("bad pair label '{other}'"))),
        };
        pairs.push(TrainingPair {
            diff: parse_floats(rest, d, &lines)?,
            label,
        });
    }
    for r in 0..d {
        for c in 0..r {
            if m[(r, c)] != m[(c, r)] {
                return Err(Error::Checkpoint("information matrix is not symmetric".into()));
            }
        }
    }
    RankerState::from_parts(theta, m, pairs, lambda, norm_bound, round)
}
