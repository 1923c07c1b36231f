use std::fmt::Write;

use super::{ErrorReport, FindingItem};
use crate::correlate::TraceWarning;
use crate::run::RunState;

const EXCERPT_WIDTH: usize = 72;

pub(super) fn render(r: &ErrorReport) -> String {
    let mut out = String::new();
    let status = match r.status {
        RunState::Running => "running",
        RunState::Completed => "completed",
        RunState::Aborted => "aborted",
    };
    let _ = writeln!(out, "Run {} ({status})", r.run_id);
    out.push('\n');

    let s = &r.section_summary;
    out.push_str("1. Test summary\n");
    let _ = writeln!(
        out,
        "  {:<24}{}/{} ({:.1}%)",
        "operations covered",
        s.coverage.executed_operations,
        s.coverage.total_operations,
        s.coverage.coverage * 100.0
    );
    let _ = writeln!(out, "  {:<24}{}", "requests to BFF", s.total_main_requests);
    let _ = writeln!(out, "  {:<24}{}", "responses", s.total_responses);
    if s.status_histogram.is_empty() {
        let _ = writeln!(out, "  {:<24}-", "status codes");
    }
    for (i, (code, n)) in s.status_histogram.iter().enumerate() {
        let label = if i == 0 { "status codes" } else { "" };
        let _ = writeln!(out, "  {label:<24}{code} x{n}");
    }
    out.push('\n');

    let c = &r.section_error_counts;
    out.push_str("2. Error responses (4xx/5xx)\n");
    let _ = writeln!(out, "  {:<24}{:>6}", "source", "count");
    let _ = writeln!(out, "  {:<24}{:>6}", "BFF", c.errors_from_bff);
    for (backend, n) in &c.errors_per_backend {
        let _ = writeln!(out, "  {backend:<24}{n:>6}");
    }
    out.push('\n');

    out.push_str("3. Findings\n");
    for (i, group) in r.section_findings.iter().enumerate() {
        let _ = writeln!(out, "  [{}] {} ({})", i + 1, group.title, group.items.len());
        for item in &group.items {
            out.push_str(&item_line(item));
        }
    }

    if !r.warnings.is_empty() {
        out.push('\n');
        out.push_str("Warnings\n");
        for w in &r.warnings {
            let _ = writeln!(out, "  {}", warning_text(w));
        }
    }
    out
}

fn item_line(item: &FindingItem) -> String {
    let seq = item
        .sequence_ref
        .as_ref()
        .map(|r| format!("{}#{}", r.sequence_id, r.case_index))
        .unwrap_or_else(|| "-".into());
    let statuses: Vec<String> = item.statuses.iter().map(u16::to_string).collect();
    let mut line = format!(
        "      {}  {}  {} {} -> {}  [{}]",
        item.trace_id,
        seq,
        item.main.method,
        item.main.uri,
        item.main.status,
        statuses.join(",")
    );
    if let Some(ev) = item.evidence.first() {
        let flat: String = ev
            .matched_excerpt
            .chars()
            .map(|c| if c.is_control() { ' ' } else { c })
            .take(EXCERPT_WIDTH)
            .collect();
        let _ = write!(line, "  {}: {}", ev.pattern_id, flat.trim());
    }
    line.push('\n');
    line
}

fn warning_text(w: &TraceWarning) -> String {
    match w {
        TraceWarning::NoBffTraffic => "no requests to the BFF were observed".into(),
        TraceWarning::Orphans { count } => format!("{count} event(s) before the first BFF request"),
        TraceWarning::SelfCallSuspected { trace_id } => format!("{trace_id} may be a BFF self-call"),
        TraceWarning::UnmatchedEntry { trace_id } => format!("{trace_id} matches no fuzz case"),
    }
}
