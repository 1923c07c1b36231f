//! Exception-leak detection, per-trace finding categories and run summary.

mod patterns;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::api_model::{coverage, ApiModel, CoverageStats, UnknownOperation};
use crate::capture::TrafficEvent;
use crate::correlate::{CaseRef, TraceEntry, TraceMap};

pub use patterns::{LeakPattern, PatternError, PatternSet};

/// Maximum length, in characters, of an evidence excerpt.
pub const EXCERPT_LIMIT: usize = 200;
const CONTEXT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "kebab-case")]
pub enum EvidenceLocation {
    MainResponse,
    SubResponse(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakEvidence {
    pub pattern_id: String,
    pub matched_excerpt: String,
    pub location: EvidenceLocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Exception text in the BFF response and in some backend response.
    LeakBoth,
    LeakMainOnly,
    LeakSubOnly,
    /// Some response in the trace has a 5xx status.
    ServerError5xx,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::LeakBoth,
        Category::LeakMainOnly,
        Category::LeakSubOnly,
        Category::ServerError5xx,
    ];

    pub fn is_leak(self) -> bool {
        self != Category::ServerError5xx
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::LeakBoth => "Exception leakage in main and sub-responses",
            Category::LeakMainOnly => "Exception leakage in main response only",
            Category::LeakSubOnly => "Exception leakage in sub-responses only",
            Category::ServerError5xx => "HTTP 5xx responses",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub category: Category,
    pub trace_id: String,
    #[serde(default)]
    pub sequence_ref: Option<CaseRef>,
    /// Empty for `ServerError5xx`.
    pub evidence: Vec<LeakEvidence>,
    pub statuses: Vec<u16>,
}

/// Finds the first pattern (in set order) that matches `body`.
///
/// Non-UTF-8 bodies are searched in their lossy decoding, so the excerpt is
/// a substring of that decoding.
pub fn detect_leak(body: &[u8], patterns: &PatternSet, location: EvidenceLocation) -> Option<LeakEvidence> {
    if body.is_empty() {
        return None;
    }
    let text = String::from_utf8_lossy(body);
    patterns.iter().find_map(|p| {
        let m = p.regex.find(&text)?;
        Some(LeakEvidence {
            pattern_id: p.id.clone(),
            matched_excerpt: excerpt(&text, m.start(), m.end()).to_string(),
            location,
        })
    })
}

/// The match plus up to `CONTEXT` characters either side, at most
/// `EXCERPT_LIMIT` characters long. Context is trimmed evenly when the
/// limit bites; an over-long match is cut at the limit.
fn excerpt(text: &str, start: usize, end: usize) -> &str {
    let matched = text[start..end].chars().count();
    if matched >= EXCERPT_LIMIT {
        let cut = text[start..].char_indices().nth(EXCERPT_LIMIT).map_or(text.len(), |(i, _)| start + i);
        return &text[start..cut];
    }
    let before_avail = text[..start].chars().count().min(CONTEXT);
    let after_avail = text[end..].chars().count().min(CONTEXT);
    let budget = EXCERPT_LIMIT - matched;
    let before = before_avail.min((budget / 2).max(budget.saturating_sub(after_avail)));
    let after = after_avail.min(budget - before);

    let from = if before == 0 {
        start
    } else {
        text[..start].char_indices().rev().nth(before - 1).map_or(0, |(i, _)| i)
    };
    let to = text[end..].char_indices().nth(after).map_or(text.len(), |(i, _)| end + i);
    &text[from..to]
}

/// Events in the trace whose response body was not captured.
pub fn body_unavailable(entry: &TraceEntry) -> bool {
    entry.events().any(|e| e.has_response() && e.resp_body.is_none())
}

fn event_evidence(ev: &TrafficEvent, patterns: &PatternSet, loc: EvidenceLocation) -> Option<LeakEvidence> {
    detect_leak(ev.resp_body.as_ref()?.as_bytes(), patterns, loc)
}

/// Evidence for every event in the trace; main first, then subs in order.
pub fn trace_evidence(entry: &TraceEntry, patterns: &PatternSet) -> Vec<LeakEvidence> {
    let main = event_evidence(&entry.main, patterns, EvidenceLocation::MainResponse);
    let subs = entry
        .subs
        .iter()
        .enumerate()
        .filter_map(|(i, s)| event_evidence(s, patterns, EvidenceLocation::SubResponse(i)));
    main.into_iter().chain(subs).collect()
}

/// At most one leak category plus, independently, `ServerError5xx`.
pub fn classify_trace(entry: &TraceEntry, patterns: &PatternSet) -> Vec<Finding> {
    let evidence = trace_evidence(entry, patterns);
    let in_main = evidence.iter().any(|e| e.location == EvidenceLocation::MainResponse);
    let in_sub = evidence.iter().any(|e| e.location != EvidenceLocation::MainResponse);
    let status_at = |loc: EvidenceLocation| match loc {
        EvidenceLocation::MainResponse => entry.main.status,
        EvidenceLocation::SubResponse(i) => entry.subs[i].status,
    };

    let mut findings = Vec::new();
    let leak = match (in_main, in_sub) {
        (true, true) => Some(Category::LeakBoth),
        (true, false) => Some(Category::LeakMainOnly),
        (false, true) => Some(Category::LeakSubOnly),
        (false, false) => None,
    };
    if let Some(category) = leak {
        let statuses: BTreeSet<u16> = evidence.iter().map(|e| status_at(e.location)).collect();
        findings.push(Finding {
            category,
            trace_id: entry.id.clone(),
            sequence_ref: entry.sequence_ref.clone(),
            evidence,
            statuses: statuses.into_iter().collect(),
        });
    }
    let server_errors: BTreeSet<u16> = entry
        .events()
        .filter(|e| e.is_server_error())
        .map(|e| e.status)
        .collect();
    if !server_errors.is_empty() {
        findings.push(Finding {
            category: Category::ServerError5xx,
            trace_id: entry.id.clone(),
            sequence_ref: entry.sequence_ref.clone(),
            evidence: Vec::new(),
            statuses: server_errors.into_iter().collect(),
        });
    }
    findings
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub coverage: CoverageStats,
    pub total_main_requests: u64,
    /// Main, sub and orphan events that carry a response status.
    pub total_responses: u64,
    pub status_histogram: BTreeMap<u16, u64>,
    pub errors_from_bff: u64,
    /// Keyed by the `host:port` the erroring request was sent to.
    pub errors_per_backend: BTreeMap<String, u64>,
}

impl ReportSummary {
    pub fn histogram_total(&self) -> u64 {
        self.status_histogram.values().sum()
    }
}

pub fn summarize<'a, I>(map: &TraceMap, model: &ApiModel, executed: I) -> Result<ReportSummary, UnknownOperation>
where
    I: IntoIterator<Item = &'a str>,
{
    let coverage = coverage(model, executed)?;
    let mut histogram = BTreeMap::new();
    let mut per_backend = BTreeMap::new();
    let mut errors_from_bff = 0;

    let backend_events = map.entries.iter().flat_map(|e| &e.subs).chain(&map.orphans);
    for ev in map.entries.iter().map(|e| &e.main).chain(backend_events.clone()) {
        if ev.has_response() {
            *histogram.entry(ev.status).or_insert(0) += 1;
        }
    }
    for entry in &map.entries {
        if entry.main.is_error_status() {
            errors_from_bff += 1;
        }
    }
    for ev in backend_events {
        if ev.is_error_status() {
            *per_backend.entry(ev.resp().to_string()).or_insert(0) += 1;
        }
    }
    let total_responses = histogram.values().sum();
    Ok(ReportSummary {
        coverage,
        total_main_requests: map.entries.len() as u64,
        total_responses,
        status_histogram: histogram,
        errors_from_bff,
        errors_per_backend: per_backend,
    })
}
