//! Run configuration, the persisted run record and the aggregation pipeline.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::api_model::{ApiModel, UnknownOperation};
use crate::capture::{merge_logs, CaptureLog, LogDialect, MergeError};
use crate::classify::{body_unavailable, classify_trace, summarize, Finding, PatternSet, ReportSummary};
use crate::correlate::{build_trace_map, link_sequences, LinkError, TraceAnnotation, TraceMap, UnmatchedPolicy};
use crate::fuzz::{FuzzConfig, FuzzConfigError, SequenceResult};
use crate::Endpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Fuzz the BFF through capture proxies.
    #[default]
    LiveProxy,
    /// Analyze a previously captured log; nothing is sent.
    IngestOnly,
}

/// A capture proxy: accepts on `listen`, forwards to `upstream`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyRoute {
    pub listen: Endpoint,
    pub upstream: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSource {
    pub log_path: PathBuf,
    pub dialect: LogDialect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub spec_path: Option<PathBuf>,
    /// The BFF as seen on the wire; requests addressed here are main requests.
    #[serde(default)]
    pub bff: Option<Endpoint>,
    /// Where the capture proxy in front of the BFF listens. The fuzzer
    /// sends its requests here. Defaults to an ephemeral loopback port.
    #[serde(default)]
    pub bff_proxy: Option<Endpoint>,
    #[serde(default)]
    pub backend_proxies: Vec<ProxyRoute>,
    #[serde(default)]
    pub fuzz: FuzzConfig,
    #[serde(default)]
    pub patterns_path: Option<PathBuf>,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub ingest: Option<IngestSource>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("`bff` is required")]
    MissingBff,
    #[error("live-proxy mode needs at least one entry in `backend_proxies`")]
    NoBackendProxies,
    #[error("live-proxy mode needs `spec_path`")]
    MissingSpec,
    #[error("ingest-only mode needs `ingest`")]
    MissingIngest,
    #[error("invalid fuzz settings: {0}")]
    Fuzz(#[from] FuzzConfigError),
}

impl RunConfig {
    pub fn ingest_only(bff: Endpoint, log_path: impl Into<PathBuf>, dialect: LogDialect) -> Self {
        Self {
            spec_path: None,
            bff: Some(bff),
            bff_proxy: None,
            backend_proxies: Vec::new(),
            fuzz: FuzzConfig::default(),
            patterns_path: None,
            mode: RunMode::IngestOnly,
            ingest: Some(IngestSource {
                log_path: log_path.into(),
                dialect,
            }),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bff.is_none() {
            return Err(ConfigError::MissingBff);
        }
        match self.mode {
            RunMode::LiveProxy => {
                if self.backend_proxies.is_empty() {
                    return Err(ConfigError::NoBackendProxies);
                }
                if self.spec_path.is_none() {
                    return Err(ConfigError::MissingSpec);
                }
                self.fuzz.validate()?;
            }
            RunMode::IngestOnly if self.ingest.is_none() => return Err(ConfigError::MissingIngest),
            RunMode::IngestOnly => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunState {
    Running,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub config: RunConfig,
    pub status: RunState,
    #[serde(default)]
    pub sequences: Vec<SequenceResult>,
    #[serde(default)]
    pub trace_map: Option<TraceMap>,
    #[serde(default)]
    pub findings: Vec<Finding>,
    #[serde(default)]
    pub summary: Option<ReportSummary>,
    /// Why the run was aborted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("completed run {0} lacks a trace map or summary")]
    IncompleteResults(String),
    #[error("run id is empty")]
    EmptyId,
}

impl RunRecord {
    pub fn running(run_id: impl Into<String>, created_at: u64, config: RunConfig) -> Self {
        Self {
            run_id: run_id.into(),
            created_at,
            config,
            status: RunState::Running,
            sequences: Vec::new(),
            trace_map: None,
            findings: Vec::new(),
            summary: None,
            error: None,
        }
    }

    pub fn complete(&mut self, results: Aggregated) {
        self.trace_map = Some(results.trace_map);
        self.findings = results.findings;
        self.summary = Some(results.summary);
        self.status = RunState::Completed;
    }

    pub fn abort(&mut self, reason: impl Into<String>) {
        self.status = RunState::Aborted;
        self.error = Some(reason.into());
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.run_id.is_empty() {
            return Err(RecordError::EmptyId);
        }
        if self.status == RunState::Completed && (self.trace_map.is_none() || self.summary.is_none()) {
            return Err(RecordError::IncompleteResults(self.run_id.clone()));
        }
        Ok(())
    }

    /// Number of findings per category, in `Category::ALL` order.
    pub fn finding_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for f in &self.findings {
            let i = crate::classify::Category::ALL
                .iter()
                .position(|c| *c == f.category)
                .expect("every category is listed");
            counts[i] += 1;
        }
        counts
    }
}

/// Everything the aggregation step reads.
pub struct AggregateInput<'a> {
    pub run_id: &'a str,
    pub model: &'a ApiModel,
    pub bff: &'a Endpoint,
    pub logs: Vec<CaptureLog>,
    pub sequences: &'a [SequenceResult],
    pub patterns: &'a PatternSet,
    pub quiescence_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub trace_map: TraceMap,
    pub findings: Vec<Finding>,
    pub summary: ReportSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error("correlation is ambiguous: {0}")]
    Link(#[from] LinkError),
    #[error(transparent)]
    UnknownOperation(#[from] UnknownOperation),
}

/// Merge, correlate, link, classify and summarize.
///
/// Unmatched BFF requests and missing BFF traffic become warnings on the
/// trace map; ambiguous links are errors because the attribution would be
/// wrong.
pub fn aggregate(input: AggregateInput<'_>) -> Result<Aggregated, AggregateError> {
    let log = if input.logs.is_empty() {
        CaptureLog::empty(input.run_id)
    } else {
        merge_logs(input.logs)?
    };
    let mut trace_map = build_trace_map(&log, input.bff);
    if !input.sequences.is_empty() {
        trace_map = link_sequences(&trace_map, input.sequences, input.quiescence_ms, UnmatchedPolicy::Warn)?;
    }

    let mut findings = Vec::new();
    for entry in &mut trace_map.entries {
        if body_unavailable(entry) {
            entry.annotate(TraceAnnotation::BodyUnavailable);
        }
        findings.extend(classify_trace(entry, input.patterns));
    }

    let executed: BTreeSet<&str> = input
        .sequences
        .iter()
        .flat_map(|s| s.cases())
        .filter(|c| c.was_sent())
        .map(|c| c.operation.as_str())
        .collect();
    let summary = summarize(&trace_map, input.model, executed)?;
    Ok(Aggregated {
        trace_map,
        findings,
        summary,
    })
}
