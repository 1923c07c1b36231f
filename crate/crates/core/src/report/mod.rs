//! The three-section error report and per-trace graphs.

mod graph;
mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::api_model::CoverageStats;
use crate::capture::TrafficEvent;
use crate::classify::{Category, Finding, LeakEvidence, ReportSummary};
use crate::correlate::{CaseRef, TraceAnnotation, TraceEntry, TraceWarning};
use crate::fuzz::{CaseOutcome, MutationDescriptor};
use crate::run::{RunRecord, RunState};

pub use graph::{
    backend_node_id, build_graph, EdgeData, EdgeKind, GraphEdge, GraphModel, GraphNode, NodeData, NodeKind,
    PayloadPart, PayloadRef, BFF_NODE, CLIENT_NODE,
};

/// JSON Schema for the `json` export.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub errors_from_bff: u64,
    pub errors_per_backend: BTreeMap<String, u64>,
}

/// One HTTP exchange of a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub from: String,
    pub to: String,
    pub method: String,
    pub uri: String,
    pub status: u16,
}

impl From<&TrafficEvent> for Exchange {
    fn from(ev: &TrafficEvent) -> Self {
        Self {
            from: ev.orig().to_string(),
            to: ev.resp().to_string(),
            method: ev.method.clone(),
            uri: ev.uri.clone(),
            status: ev.status,
        }
    }
}

/// One request of the fuzz sequence that led to a finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStep {
    pub operation: String,
    #[serde(default)]
    pub mutation: Option<MutationDescriptor>,
    #[serde(default)]
    pub status: Option<u16>,
    pub outcome: CaseOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingItem {
    pub trace_id: String,
    #[serde(default)]
    pub sequence_ref: Option<CaseRef>,
    pub statuses: Vec<u16>,
    pub evidence: Vec<LeakEvidence>,
    #[serde(default)]
    pub annotations: Vec<TraceAnnotation>,
    pub main: Exchange,
    pub subs: Vec<Exchange>,
    /// The whole fuzz sequence, when the trace was linked to one.
    #[serde(default)]
    pub sequence: Vec<SequenceStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingGroup {
    pub category: Category,
    pub title: String,
    pub items: Vec<FindingItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub run_id: String,
    pub created_at: u64,
    pub status: RunState,
    pub section_summary: ReportSummary,
    pub section_error_counts: ErrorCounts,
    /// Always four groups, in `Category::ALL` order.
    pub section_findings: Vec<FindingGroup>,
    #[serde(default)]
    pub warnings: Vec<TraceWarning>,
}

impl ErrorReport {
    pub fn group(&self, category: Category) -> &FindingGroup {
        self.section_findings
            .iter()
            .find(|g| g.category == category)
            .expect("all four groups are present")
    }

    pub fn counts(&self) -> [usize; 4] {
        Category::ALL.map(|c| self.group(c).items.len())
    }
}

fn empty_summary() -> ReportSummary {
    ReportSummary {
        coverage: CoverageStats::zero(),
        total_main_requests: 0,
        total_responses: 0,
        status_histogram: BTreeMap::new(),
        errors_from_bff: 0,
        errors_per_backend: BTreeMap::new(),
    }
}

pub fn render_error_report(run: &RunRecord) -> ErrorReport {
    let summary = run.summary.clone().unwrap_or_else(empty_summary);
    let entries: Vec<&TraceEntry> = run.trace_map.iter().flat_map(|m| &m.entries).collect();
    let item = |f: &Finding| -> Option<FindingItem> {
        let entry = entries.iter().find(|e| e.id == f.trace_id)?;
        Some(FindingItem {
            trace_id: f.trace_id.clone(),
            sequence_ref: f.sequence_ref.clone(),
            statuses: f.statuses.clone(),
            evidence: f.evidence.clone(),
            annotations: entry.annotations.clone(),
            main: Exchange::from(&entry.main),
            subs: entry.subs.iter().map(Exchange::from).collect(),
            sequence: f.sequence_ref.as_ref().map(|r| steps(run, r)).unwrap_or_default(),
        })
    };
    let section_findings = Category::ALL
        .iter()
        .map(|&category| FindingGroup {
            category,
            title: category.title().to_string(),
            items: run
                .findings
                .iter()
                .filter(|f| f.category == category)
                .filter_map(item)
                .collect(),
        })
        .collect();

    ErrorReport {
        run_id: run.run_id.clone(),
        created_at: run.created_at,
        status: run.status,
        section_error_counts: ErrorCounts {
            errors_from_bff: summary.errors_from_bff,
            errors_per_backend: summary.errors_per_backend.clone(),
        },
        section_summary: summary,
        section_findings,
        warnings: run.trace_map.as_ref().map(|m| m.warnings.clone()).unwrap_or_default(),
    }
}

fn steps(run: &RunRecord, r: &CaseRef) -> Vec<SequenceStep> {
    run.sequences
        .iter()
        .find(|s| s.id() == r.sequence_id)
        .map(|s| {
            s.cases()
                .iter()
                .map(|c| SequenceStep {
                    operation: c.operation.clone(),
                    mutation: c.mutation.clone(),
                    status: c.response_status,
                    outcome: c.outcome.clone(),
                })
                .collect()
        })
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" | "txt" => Ok(ReportFormat::Text),
            other => Err(format!("unknown report format `{other}` (expected json or text)")),
        }
    }
}

pub fn export_report(report: &ErrorReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("reports serialize");
            out.push(b'\n');
            out
        }
        ReportFormat::Text => text::render(report).into_bytes(),
    }
}
