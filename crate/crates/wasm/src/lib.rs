//! Browser demo: the analysis half of bfftrace, on text pasted into a page.

use bfftrace_core::api_model::{infer_dependencies, parse_spec, ApiModel, SpecFormat};
use bfftrace_core::capture::{parse_log, LogDialect};
use bfftrace_core::classify::{detect_leak, EvidenceLocation, PatternSet};
use bfftrace_core::report::build_graph;
use bfftrace_core::run::{aggregate, AggregateInput};
use bfftrace_core::Endpoint;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Correlates a capture log and classifies every trace.
pub fn analyze(log: &str, dialect: &str, bff: &str) -> Result<Value, String> {
    let dialect: LogDialect = dialect.parse().map_err(|e| format!("{e}"))?;
    let bff: Endpoint = bff.parse().map_err(|e| format!("{e}"))?;
    let ingested = parse_log(log, dialect, "demo").map_err(|e| e.to_string())?;
    let agg = aggregate(AggregateInput {
        run_id: "demo",
        model: &ApiModel::empty(),
        bff: &bff,
        logs: vec![ingested.log],
        sequences: &[],
        patterns: &PatternSet::builtin(),
        quiescence_ms: 0,
    })
    .map_err(|e| e.to_string())?;
    let graphs: Vec<_> = agg
        .trace_map
        .entries
        .iter()
        .map(|e| build_graph(e, &agg.findings))
        .collect();
    Ok(json!({
        "records": ingested.records,
        "skipped": ingested.skipped,
        "trace_map": agg.trace_map,
        "findings": agg.findings,
        "summary": agg.summary,
        "graphs": graphs,
    }))
}

/// Producer-to-consumer edges of an OpenAPI document.
pub fn dependencies(spec: &str) -> Result<Value, String> {
    let format = if spec.trim_start().starts_with('{') {
        SpecFormat::Json
    } else {
        SpecFormat::Yaml
    };
    let model = parse_spec(spec.as_bytes(), format).map_err(|e| e.to_string())?;
    let ops: Vec<_> = model
        .operations
        .iter()
        .map(|o| json!({ "id": o.id, "method": o.method.as_str(), "path": o.path_template }))
        .collect();
    Ok(json!({ "operations": ops, "edges": infer_dependencies(&model) }))
}

/// First built-in leak pattern found in `body`, or null.
pub fn leak(body: &str) -> Value {
    match detect_leak(body.as_bytes(), &PatternSet::builtin(), EvidenceLocation::MainResponse) {
        Some(ev) => json!({ "pattern_id": ev.pattern_id, "excerpt": ev.matched_excerpt }),
        None => Value::Null,
    }
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = analyzeLog)]
pub fn analyze_log(log: &str, dialect: &str, bff: &str) -> Result<String, JsError> {
    to_js(analyze(log, dialect, bff))
}

#[wasm_bindgen(js_name = inferDependencies)]
pub fn infer_dependencies_js(spec: &str) -> Result<String, JsError> {
    to_js(dependencies(spec))
}

#[wasm_bindgen(js_name = detectLeak)]
pub fn detect_leak_js(body: &str) -> String {
    leak(body).to_string()
}

#[wasm_bindgen(js_name = sampleLog)]
pub fn sample_log() -> String {
    bfftrace_core::fixtures::ZEEK_HTTP_LOG.to_string()
}

#[wasm_bindgen(js_name = sampleBff)]
pub fn sample_bff() -> String {
    bfftrace_core::fixtures::ZEEK_HTTP_BFF.to_string()
}

#[wasm_bindgen(js_name = sampleSpec)]
pub fn sample_spec() -> String {
    bfftrace_core::fixtures::HARNESS_OPENAPI.to_string()
}
