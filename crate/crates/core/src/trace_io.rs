//! Trace files: flat CSV (`wall_seconds,outer_iter,elbo,accuracy`) or a JSON document.

use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainers::{StopReason, Strategy, TraceRecord};

pub const CSV_HEADER: &str = "wall_seconds,outer_iter,elbo,accuracy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    Csv,
    Json,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Json => "json",
        }
    }
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TraceFormat::Csv),
            "json" => Ok(TraceFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown trace format {other:?} (expected csv or json)"))),
        }
    }
}

/// Writes one CSV row per record and flushes after each, so an aborted run leaves a valid prefix.
pub struct CsvTraceWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvTraceWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, r: &TraceRecord) -> Result<()> {
        let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(self.out, "{},{},{},{}", r.wall_seconds, r.outer_iter, r.elbo, acc)?;
        self.out.flush()?;
        Ok(())
    }
}

/// JSON trace document. `stop_reason` is absent when the run failed part way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonTrace {
    pub dataset: String,
    pub strategy: Strategy,
    pub step_rate: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub error: Option<String>,
    pub records: Vec<TraceRecord>,
}

pub fn write_json_trace<W: Write>(trace: &JsonTrace, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, trace).map_err(|e| Error::Io(e.into()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Parses a CSV trace back into records (θ is not stored in CSV and comes back empty).
pub fn read_csv_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != CSV_HEADER {
        return Err(Error::Parse { line: 1, msg: format!("expected header {CSV_HEADER:?}") });
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        let bad = |msg: &str| Error::Parse { line: lineno, msg: msg.to_string() };
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        out.push(TraceRecord {
            wall_seconds: fields[0].parse().map_err(|_| bad("bad wall_seconds"))?,
            outer_iter: fields[1].parse().map_err(|_| bad("bad outer_iter"))?,
            elbo: fields[2].parse().map_err(|_| bad("bad elbo"))?,
            accuracy: match fields[3] {
                "" => None,
                a => Some(a.parse().map_err(|_| bad("bad accuracy"))?),
            },
            log_theta: Vec::new(),
        });
    }
    Ok(out)
}
