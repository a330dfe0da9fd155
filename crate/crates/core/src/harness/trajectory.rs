//! Trajectory records and their line-delimited JSON and CSV forms.
//!
//! CSV columns, in order: `t, lyapunov, f_norm, u_norm, alpha`, then
//! `step_time` when timing is recorded, then one column `p<k>` per flat
//! parameter coordinate, then one column `route_<source>` per source holding
//! the greedy route as `>`-separated state indices (with a trailing `!` when
//! the route does not reach the terminal state).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::routes::Route;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    /// Flat parameter vector.
    pub params: Vec<f64>,
    pub lyapunov: f64,
    pub f_norm: f64,
    pub u_norm: f64,
    pub alpha: f64,
    pub routes: Vec<Route>,
    /// Wall-clock seconds spent on the step; omitted unless timing is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_time: Option<f64>,
}

pub fn write_jsonl_record<W: Write>(
    out: &mut W,
    record: &impl Serialize,
) -> Result<(), HarnessError> {
    serde_json::to_writer(&mut *out, record).map_err(|e| HarnessError::Io(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_jsonl<W: Write>(
    out: &mut W,
    records: &[TrajectoryRecord],
) -> Result<(), HarnessError> {
    for r in records {
        write_jsonl_record(out, r)?;
    }
    Ok(())
}

/// Parses line-delimited records, skipping blank lines.
pub fn parse_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(
    input: R,
) -> Result<Vec<T>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn route_cell(r: &Route) -> String {
    let mut s = r
        .hops
        .iter()
        .map(|h| h.to_string())
        .collect::<Vec<_>>()
        .join(">");
    if !r.reaches_terminal {
        s.push('!');
    }
    s
}

/// Streams records as CSV; the header is taken from the first record.
pub struct CsvTrajectoryWriter<W: Write> {
    inner: csv::Writer<W>,
    header_written: bool,
}

impl<W: Write> CsvTrajectoryWriter<W> {
    pub fn new(out: W) -> Self {
        CsvTrajectoryWriter {
            inner: csv::Writer::from_writer(out),
            header_written: false,
        }
    }

    pub fn write(&mut self, r: &TrajectoryRecord) -> Result<(), HarnessError> {
        let err = |e: csv::Error| HarnessError::Io(e.to_string());
        if !self.header_written {
            let mut h: Vec<String> = ["t", "lyapunov", "f_norm", "u_norm", "alpha"]
                .map(String::from)
                .to_vec();
            if r.step_time.is_some() {
                h.push("step_time".into());
            }
            h.extend((0..r.params.len()).map(|k| format!("p{k}")));
            h.extend(r.routes.iter().map(|rt| format!("route_{}", rt.source)));
            self.inner.write_record(&h).map_err(err)?;
            self.header_written = true;
        }
        let mut row: Vec<String> = [r.t, r.lyapunov, r.f_norm, r.u_norm, r.alpha]
            .map(|x| x.to_string())
            .to_vec();
        if let Some(st) = r.step_time {
            row.push(st.to_string());
        }
        row.extend(r.params.iter().map(|x| x.to_string()));
        row.extend(r.routes.iter().map(route_cell));
        self.inner.write_record(&row).map_err(err)
    }

    pub fn flush(&mut self) -> Result<(), HarnessError> {
        self.inner.flush()?;
        Ok(())
    }
}
