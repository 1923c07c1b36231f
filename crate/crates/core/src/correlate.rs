//! Chronological attribution of backend calls to the client request that
//! caused them.

use serde::{Deserialize, Serialize};

use crate::capture::{CaptureLog, TrafficEvent};
use crate::fuzz::SequenceResult;
use crate::Endpoint;

/// Points at one executed fuzz case.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaseRef {
    pub sequence_id: String,
    pub case_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceAnnotation {
    /// The BFF endpoint shows up as an origin next to this entry, so the
    /// entry may be a self-call rather than a client request.
    SelfCallSuspected,
    /// Some response body was not captured; leak detection skipped it.
    BodyUnavailable,
}

/// One request to the BFF and the backend calls attributed to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub id: String,
    pub main: TrafficEvent,
    pub subs: Vec<TrafficEvent>,
    #[serde(default)]
    pub sequence_ref: Option<CaseRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<TraceAnnotation>,
}

impl TraceEntry {
    pub fn events(&self) -> impl Iterator<Item = &TrafficEvent> {
        std::iter::once(&self.main).chain(&self.subs)
    }

    pub fn annotate(&mut self, a: TraceAnnotation) {
        if let Err(pos) = self.annotations.binary_search(&a) {
            self.annotations.insert(pos, a);
        }
    }

    pub fn has_annotation(&self, a: TraceAnnotation) -> bool {
        self.annotations.contains(&a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "kebab-case")]
pub enum TraceWarning {
    /// No event was addressed to the BFF.
    NoBffTraffic,
    /// Events seen before the first request to the BFF.
    Orphans { count: usize },
    SelfCallSuspected { trace_id: String },
    /// A request to the BFF that no fuzz case accounts for.
    UnmatchedEntry { trace_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMap {
    pub bff: Endpoint,
    pub entries: Vec<TraceEntry>,
    pub orphans: Vec<TrafficEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<TraceWarning>,
}

impl TraceMap {
    pub fn entry(&self, id: &str) -> Option<&TraceEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Number of events the map accounts for.
    pub fn event_count(&self) -> usize {
        self.orphans.len() + self.entries.iter().map(|e| 1 + e.subs.len()).sum::<usize>()
    }

    pub fn has_warning(&self, w: &TraceWarning) -> bool {
        self.warnings.contains(w)
    }
}

pub fn trace_id(index: usize) -> String {
    format!("t{:04}", index + 1)
}

/// Partitions a chronological log into BFF requests and their backend calls.
///
/// An event addressed to `bff` (host and port) opens a new entry; every
/// other event joins the current entry, or the orphan list when no entry
/// is open yet.
pub fn build_trace_map(log: &CaptureLog, bff: &Endpoint) -> TraceMap {
    let mut entries: Vec<TraceEntry> = Vec::new();
    let mut orphans = Vec::new();
    let mut warnings = Vec::new();
    let mut prev: Option<&TrafficEvent> = None;

    for ev in log.events() {
        if ev.is_destined_to(bff) {
            let mut entry = TraceEntry {
                id: trace_id(entries.len()),
                main: ev.clone(),
                subs: Vec::new(),
                sequence_ref: None,
                annotations: Vec::new(),
            };
            if ev.is_from(bff) || prev.is_some_and(|p| p.is_from(bff)) {
                entry.annotate(TraceAnnotation::SelfCallSuspected);
                warnings.push(TraceWarning::SelfCallSuspected {
                    trace_id: entry.id.clone(),
                });
            }
            entries.push(entry);
        } else if let Some(current) = entries.last_mut() {
            current.subs.push(ev.clone());
        } else {
            orphans.push(ev.clone());
        }
        prev = Some(ev);
    }

    if entries.is_empty() {
        warnings.insert(0, TraceWarning::NoBffTraffic);
    }
    if !orphans.is_empty() {
        warnings.push(TraceWarning::Orphans {
            count: orphans.len(),
        });
    }
    TraceMap {
        bff: bff.clone(),
        entries,
        orphans,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinkError {
    #[error("trace {trace_id} matches more than one fuzz case: {cases:?}")]
    AmbiguousLink { trace_id: String, cases: Vec<CaseRef> },
    #[error("fuzz case {case:?} matches traces {trace_ids:?}")]
    CaseClaimedTwice { case: CaseRef, trace_ids: Vec<String> },
    #[error("trace {trace_id} matches no fuzz case")]
    UnmatchedEntry { trace_id: String },
}

impl LinkError {
    /// Both ambiguity variants mean the serial execution contract broke.
    pub fn is_ambiguous(&self) -> bool {
        !matches!(self, LinkError::UnmatchedEntry { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnmatchedPolicy {
    /// An unmatched entry is an error.
    Strict,
    /// An unmatched entry is recorded as a warning.
    Warn,
}

/// Links every entry's main request to the fuzz case that sent it.
///
/// A case matches when its `[sent_at, received_at]` window contains the
/// main request's timestamp; failing that, the nearest window within
/// `quiescence_ms` matches. Ties and double claims are ambiguity errors.
pub fn link_sequences(
    map: &TraceMap,
    sequences: &[SequenceResult],
    quiescence_ms: u64,
    policy: UnmatchedPolicy,
) -> Result<TraceMap, LinkError> {
    let windows: Vec<(CaseRef, i64, i64)> = sequences
        .iter()
        .flat_map(|s| {
            s.cases().iter().enumerate().filter_map(|(i, c)| {
                let (sent, recv) = c.window()?;
                Some((
                    CaseRef {
                        sequence_id: s.id().to_string(),
                        case_index: i,
                    },
                    sent,
                    recv.max(sent),
                ))
            })
        })
        .collect();
    let slack = i64::try_from(quiescence_ms).unwrap_or(i64::MAX / 1000).saturating_mul(1000);

    let mut out = map.clone();
    let mut claimed: Vec<(CaseRef, String)> = Vec::new();
    for entry in &mut out.entries {
        let ts = entry.main.ts;
        let containing: Vec<&CaseRef> = windows
            .iter()
            .filter(|(_, s, r)| (*s..=*r).contains(&ts))
            .map(|(c, _, _)| c)
            .collect();
        let chosen = match containing.as_slice() {
            [one] => Some((*one).clone()),
            [] => nearest(&windows, ts, slack, &entry.id)?,
            many => {
                return Err(LinkError::AmbiguousLink {
                    trace_id: entry.id.clone(),
                    cases: many.iter().map(|c| (*c).clone()).collect(),
                })
            }
        };
        match chosen {
            Some(case) => {
                if let Some((_, other)) = claimed.iter().find(|(c, _)| *c == case) {
                    return Err(LinkError::CaseClaimedTwice {
                        case,
                        trace_ids: vec![other.clone(), entry.id.clone()],
                    });
                }
                claimed.push((case.clone(), entry.id.clone()));
                entry.sequence_ref = Some(case);
            }
            None if policy == UnmatchedPolicy::Strict => {
                return Err(LinkError::UnmatchedEntry {
                    trace_id: entry.id.clone(),
                })
            }
            None => out.warnings.push(TraceWarning::UnmatchedEntry {
                trace_id: entry.id.clone(),
            }),
        }
    }
    Ok(out)
}

fn nearest(
    windows: &[(CaseRef, i64, i64)],
    ts: i64,
    slack: i64,
    trace_id: &str,
) -> Result<Option<CaseRef>, LinkError> {
    let distance = |s: i64, r: i64| if ts < s { s - ts } else { ts - r };
    let best = windows
        .iter()
        .map(|(_, s, r)| distance(*s, *r))
        .filter(|d| *d <= slack)
        .min();
    let Some(best) = best else {
        return Ok(None);
    };
    let at_best: Vec<&CaseRef> = windows
        .iter()
        .filter(|(_, s, r)| distance(*s, *r) == best)
        .map(|(c, _, _)| c)
        .collect();
    if at_best.len() > 1 {
        return Err(LinkError::AmbiguousLink {
            trace_id: trace_id.to_string(),
            cases: at_best.into_iter().cloned().collect(),
        });
    }
    Ok(Some(at_best[0].clone()))
}
