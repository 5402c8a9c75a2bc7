//! Per-epoch traces and their CSV form.
//!
//! Floats use Rust's shortest round-trip formatting, so reading a written
//! trace gives back the same bits. Missing bias/variance are empty fields.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "epoch,train_ce,test_ce,test_mse,test_zo,test_acc,ov,v_g,bias,variance";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_ce: f64,
    pub test_ce: f64,
    pub test_mse: f64,
    /// Test error.
    pub test_zo: f64,
    pub test_acc: f64,
    pub ov: f64,
    pub v_g: f64,
    pub bias: Option<f64>,
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, f: impl Fn(&TraceRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.train_ce,
                r.test_ce,
                r.test_mse,
                r.test_zo,
                r.test_acc,
                r.ov,
                r.v_g,
                opt(r.bias),
                opt(r.variance)
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == TRACE_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{TRACE_HEADER}`"),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            rows.push(parse_row(line, i + 1)?);
        }
        Ok(Self { rows })
    }
}

fn parse_row(line: &str, line_no: usize) -> Result<TraceRow> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 10 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected 10 fields, found {}", fields.len()),
        });
    }
    let err = |name: &str, value: &str| Error::Parse {
        line: line_no,
        message: format!("bad {name} `{value}`"),
    };
    let real = |i: usize, name: &str| fields[i].parse::<f64>().map_err(|_| err(name, fields[i]));
    let optional = |i: usize, name: &str| {
        if fields[i].is_empty() {
            Ok(None)
        } else {
            real(i, name).map(Some)
        }
    };
    Ok(TraceRow {
        epoch: fields[0].parse().map_err(|_| err("epoch", fields[0]))?,
        train_ce: real(1, "train_ce")?,
        test_ce: real(2, "test_ce")?,
        test_mse: real(3, "test_mse")?,
        test_zo: real(4, "test_zo")?,
        test_acc: real(5, "test_acc")?,
        ov: real(6, "ov")?,
        v_g: real(7, "v_g")?,
        bias: optional(8, "bias")?,
        variance: optional(9, "variance")?,
    })
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_trace_csv(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), trace.to_csv().as_bytes())
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Trace> {
    Trace::from_csv(&fs::read_to_string(path)?)
}
