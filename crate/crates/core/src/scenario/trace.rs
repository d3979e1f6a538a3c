//! Trace files: one canonical JSON object per line. The first line is the
//! header (scenario, effective seed and injections), then one line per
//! step, then the final audit report.

use serde::{Deserialize, Serialize};

use crate::audit::AuditReport;
use crate::canon::to_canonical_bytes;
use crate::ids::HashDigest;

use super::runner::{run_with_header, RunOptions};
use super::{Injection, Scenario, ScenarioError};

pub use super::runner::TraceEntry;

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u32,
    pub scenario: Scenario,
    pub seed: u64,
    pub injections: Vec<Injection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFinal {
    pub report: AuditReport,
    pub world_digest: HashDigest,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Entry(TraceEntry),
    Final(TraceFinal),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub entries: Vec<TraceEntry>,
    pub report: AuditReport,
    pub world_digest: HashDigest,
}

fn line_of(l: &Line) -> String {
    String::from_utf8(to_canonical_bytes(l)).expect("canonical JSON is UTF-8")
}

impl Trace {
    pub fn to_lines(&self) -> String {
        let mut out = line_of(&Line::Header(self.header.clone()));
        out.push('\n');
        for e in &self.entries {
            out.push_str(&line_of(&Line::Entry(e.clone())));
            out.push('\n');
        }
        out.push_str(&line_of(&Line::Final(TraceFinal {
            report: self.report.clone(),
            world_digest: self.world_digest.clone(),
        })));
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> Result<Trace, ScenarioError> {
        let mut header = None;
        let mut entries = Vec::new();
        let mut fin = None;
        for (i, raw) in text.lines().enumerate() {
            let line: Line = serde_json::from_str(raw).map_err(|e| ScenarioError::TraceParse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            match (line, i) {
                (Line::Header(h), 0) => header = Some(h),
                (Line::Entry(e), n) if n > 0 && fin.is_none() => entries.push(e),
                (Line::Final(f), n) if n > 0 && fin.is_none() => fin = Some(f),
                _ => {
                    return Err(ScenarioError::TraceParse {
                        line: i + 1,
                        reason: "line out of order".into(),
                    })
                }
            }
        }
        let header = header.ok_or(ScenarioError::TraceParse {
            line: 1,
            reason: "missing header".into(),
        })?;
        let fin = fin.ok_or(ScenarioError::TraceParse {
            line: text.lines().count(),
            reason: "missing final report".into(),
        })?;
        Ok(Trace {
            header,
            entries,
            report: fin.report,
            world_digest: fin.world_digest,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayOutcome {
    Match {
        lines: usize,
    },
    /// `line` is 1-based.
    Divergent {
        line: usize,
        original: String,
        replayed: String,
    },
}

/// Re-runs the trace's header and compares the result line by line. Only
/// the header has to parse; any later mismatch is a divergence.
pub fn replay(text: &str) -> Result<ReplayOutcome, ScenarioError> {
    let first = text.lines().next().unwrap_or_default();
    let header = match serde_json::from_str::<Line>(first) {
        Ok(Line::Header(h)) => h,
        Ok(_) => {
            return Err(ScenarioError::TraceParse {
                line: 1,
                reason: "first line is not a header".into(),
            })
        }
        Err(e) => {
            return Err(ScenarioError::TraceParse {
                line: 1,
                reason: e.to_string(),
            })
        }
    };
    let opts = RunOptions {
        audit_each_tx: false,
        ..RunOptions::default()
    };
    let fresh = run_with_header(header, &opts).trace.to_lines();
    let mut orig = text.lines();
    let mut new = fresh.lines();
    let mut n = 0;
    loop {
        n += 1;
        match (orig.next(), new.next()) {
            (None, None) => return Ok(ReplayOutcome::Match { lines: n - 1 }),
            (a, b) if a == b => continue,
            (a, b) => {
                return Ok(ReplayOutcome::Divergent {
                    line: n,
                    original: a.unwrap_or("<end of trace>").to_owned(),
                    replayed: b.unwrap_or("<end of trace>").to_owned(),
                })
            }
        }
    }
}
