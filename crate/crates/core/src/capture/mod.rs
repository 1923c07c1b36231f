//! Observed HTTP traffic: events, chronological logs and log ingestion.

mod event;
mod zeek;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use event::{CapturedBody, EventError, HeaderMap, TrafficEvent, CAPTURE_LIMIT};

/// A chronologically ordered list of events for one run.
///
/// Events are kept sorted by `ts`; equal timestamps keep insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawCaptureLog")]
pub struct CaptureLog {
    run_id: String,
    events: Vec<TrafficEvent>,
}

#[derive(Deserialize)]
struct RawCaptureLog {
    run_id: String,
    events: Vec<TrafficEvent>,
}

impl From<RawCaptureLog> for CaptureLog {
    fn from(raw: RawCaptureLog) -> Self {
        CaptureLog::new(raw.run_id, raw.events)
    }
}

impl CaptureLog {
    pub fn new(run_id: impl Into<String>, mut events: Vec<TrafficEvent>) -> Self {
        // stable: ties keep arrival order
        events.sort_by_key(|e| e.ts);
        Self {
            run_id: run_id.into(),
            events,
        }
    }

    pub fn empty(run_id: impl Into<String>) -> Self {
        Self::new(run_id, Vec::new())
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn events(&self) -> &[TrafficEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TrafficEvent> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Native JSONL rendering, one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events always serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogDialect {
    #[serde(rename = "zeek-http")]
    ZeekHttp,
    #[serde(rename = "native-jsonl")]
    NativeJsonl,
}

impl LogDialect {
    pub fn as_str(self) -> &'static str {
        match self {
            LogDialect::ZeekHttp => "zeek-http",
            LogDialect::NativeJsonl => "native-jsonl",
        }
    }
}

impl fmt::Display for LogDialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogDialect {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zeek-http" | "zeek" => Ok(LogDialect::ZeekHttp),
            "native-jsonl" | "jsonl" => Ok(LogDialect::NativeJsonl),
            other => Err(IngestError::UnknownDialect(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("unknown log dialect `{0}` (expected zeek-http or native-jsonl)")]
    UnknownDialect(String),
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no usable records: all {records} record(s) were skipped")]
    EmptyAfterSkips { records: usize },
}

/// Result of ingesting a log: the events plus the skip accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested {
    pub log: CaptureLog,
    pub records: usize,
    pub skipped: usize,
}

/// Parses log text in the given dialect.
///
/// Records that lack required fields or violate event invariants are
/// skipped and counted; `log.len() + skipped == records` always holds.
pub fn parse_log(text: &str, dialect: LogDialect, run_id: &str) -> Result<Ingested, IngestError> {
    let (events, records) = match dialect {
        LogDialect::ZeekHttp => zeek::parse(text),
        LogDialect::NativeJsonl => parse_jsonl(text),
    };
    let skipped = records - events.len();
    if events.is_empty() {
        return Err(IngestError::EmptyAfterSkips { records });
    }
    Ok(Ingested {
        log: CaptureLog::new(run_id, events),
        records,
        skipped,
    })
}

/// Reads and parses a log file. The run id is taken from the file stem.
pub fn ingest_log(source: &Path, dialect: LogDialect) -> Result<Ingested, IngestError> {
    let bytes = std::fs::read(source).map_err(|e| IngestError::UnreadableFile {
        path: source.display().to_string(),
        source: e,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let run_id = source
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_log(&text, dialect, &run_id)
}

fn parse_jsonl(text: &str) -> (Vec<TrafficEvent>, usize) {
    let mut records = 0;
    let mut events = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        records += 1;
        if let Ok(ev) = serde_json::from_str::<TrafficEvent>(line) {
            if ev.validate().is_ok() {
                events.push(ev);
            }
        }
    }
    (events, records)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MergeError {
    #[error("nothing to merge")]
    EmptyInput,
    #[error("cannot merge logs of different runs (`{0}` and `{1}`)")]
    MixedRuns(String, String),
}

/// Merges per-proxy logs of one run into a single chronology.
///
/// Equal timestamps are ordered by position in `logs`, then by position
/// within each log.
pub fn merge_logs(logs: Vec<CaptureLog>) -> Result<CaptureLog, MergeError> {
    let mut iter = logs.into_iter();
    let first = iter.next().ok_or(MergeError::EmptyInput)?;
    let run_id = first.run_id;
    let mut events = first.events;
    for log in iter {
        if log.run_id != run_id {
            return Err(MergeError::MixedRuns(run_id, log.run_id));
        }
        events.extend(log.events);
    }
    Ok(CaptureLog::new(run_id, events))
}
