//! Workload traces: one `W,<lba>` or `R,<lba>` record per line. Blank
//! lines are skipped and `#` starts a comment.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOp {
    Write,
    Read,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub op: TraceOp,
    pub lba: u32,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot read trace: {0}")]
    Io(#[from] std::io::Error),
}

fn parse_line(raw: &str) -> Result<Option<TraceRecord>, String> {
    let body = raw.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let (op, lba) = body
        .split_once(',')
        .ok_or_else(|| format!("expected `W,<lba>` or `R,<lba>`, got `{body}`"))?;
    let op = match op.trim() {
        "W" | "w" => TraceOp::Write,
        "R" | "r" => TraceOp::Read,
        other => return Err(format!("unknown operation `{other}`")),
    };
    let lba = lba
        .trim()
        .parse::<u32>()
        .map_err(|e| format!("bad logical address `{}`: {e}", lba.trim()))?;
    Ok(Some(TraceRecord { op, lba }))
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = vec![];
    for (i, raw) in text.lines().enumerate() {
        match parse_line(raw) {
            Ok(Some(r)) => out.push(r),
            Ok(None) => {}
            Err(msg) => return Err(TraceError::Parse { line: i + 1, msg }),
        }
    }
    Ok(out)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, TraceError> {
    parse_trace(&fs::read_to_string(path)?)
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let op = match r.op {
            TraceOp::Write => 'W',
            TraceOp::Read => 'R',
        };
        s.push_str(&format!("{op},{}\n", r.lba));
    }
    s
}
