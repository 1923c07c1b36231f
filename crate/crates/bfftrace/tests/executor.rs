mod common;

use std::time::Duration;

use bfftrace::executor::{digest, Executor};
use bfftrace::harness::{start_harness, FaultSchedule, HarnessHandle, HarnessPorts, Service};
use bfftrace_core::api_model::{infer_dependencies, parse_spec, ApiModel, SpecFormat};
use bfftrace_core::fixtures;
use bfftrace_core::fuzz::{generate_sequences, Binding, BindingSource, CaseOutcome, FuzzCase, FuzzConfig, TestSequence};
use bfftrace_core::Endpoint;
use common::{free_port, loopback};
use serde_json::{json, Value};

const QUIET: Duration = Duration::from_millis(5);

fn model() -> ApiModel {
    parse_spec(fixtures::HARNESS_OPENAPI.as_bytes(), SpecFormat::Json).unwrap()
}

async fn harness(rules: Value) -> HarnessHandle {
    let schedule = FaultSchedule::from_json(&json!({ "rules": rules }).to_string()).unwrap();
    start_harness(&schedule, HarnessPorts::from_base(0)).await.unwrap()
}

fn executor(target: &Endpoint) -> Executor {
    Executor::new(target, "/", QUIET, []).unwrap()
}

fn seq(cases: Vec<FuzzCase>) -> TestSequence {
    TestSequence {
        id: "s-test".into(),
        cases,
    }
}

fn new_user() -> FuzzCase {
    FuzzCase::new("createUser")
        .with_binding("name", json!("Ada"))
        .with_binding("email", json!("ada@example.org"))
}

fn fed_from(case: FuzzCase, param: &str, producer_case: usize, producer_field: &str) -> FuzzCase {
    let mut case = case;
    case.bindings.insert(
        param.into(),
        Binding {
            value: Value::Null,
            source: BindingSource::DependencyFed {
                producer_case,
                producer_field: producer_field.into(),
            },
        },
    );
    case
}

#[tokio::test]
async fn empty_sequence_sends_nothing() {
    let h = harness(json!([])).await;
    let r = executor(&h.endpoint(Service::Bff)).execute_sequence(&model(), seq(vec![])).await;
    assert!(r.cases().is_empty());
    assert_eq!(r.aborted, None);
    assert!(h.oracle_trace_map().mains.is_empty());
}

#[tokio::test]
async fn single_case_records_its_response() {
    let h = harness(json!([])).await;
    let case = FuzzCase::new("getUser").with_binding("userId", json!("u-1"));
    let r = executor(&h.endpoint(Service::Bff)).execute_sequence(&model(), seq(vec![case])).await;
    let c = &r.cases()[0];
    assert_eq!(c.outcome, CaseOutcome::Completed);
    assert_eq!(c.response_status, Some(200));
    let (sent, recv) = c.window().unwrap();
    assert!(sent <= recv);
    let body = c.captured_response().unwrap().as_bytes().to_vec();
    assert_eq!(c.response_body_digest.as_ref().unwrap().sha256, digest(&body).sha256);
    let user: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(user["userId"], "u-1");
}

#[tokio::test]
async fn failed_producer_leaves_consumer_unsent() {
    let h = harness(json!([{
        "route": "POST /users",
        "trigger": { "kind": "always" },
        "behavior": { "kind": "status-500-sanitized" }
    }]))
    .await;
    let cases = vec![new_user(), fed_from(FuzzCase::new("getUser"), "userId", 0, "userId")];
    let r = executor(&h.endpoint(Service::Bff)).execute_sequence(&model(), seq(cases)).await;
    assert_eq!(r.cases()[0].response_status, Some(500));
    assert_eq!(
        r.cases()[1].outcome,
        CaseOutcome::DependencyUnsatisfied {
            param: "userId".into(),
            producer_case: 0,
            producer_field: "userId".into(),
        }
    );
    assert!(!r.cases()[1].was_sent());
    assert_eq!(r.aborted, None);
    assert_eq!(h.oracle_trace_map().mains.len(), 1);
}

#[tokio::test]
async fn consumer_uses_the_produced_value() {
    let h = harness(json!([])).await;
    let cases = vec![new_user(), fed_from(FuzzCase::new("getUser"), "userId", 0, "userId")];
    let r = executor(&h.endpoint(Service::Bff)).execute_sequence(&model(), seq(cases)).await;
    let created: Value = serde_json::from_slice(r.cases()[0].captured_response().unwrap().as_bytes()).unwrap();
    let id = created["userId"].as_str().unwrap();
    assert_eq!(r.cases()[1].bindings["userId"].value, json!(id));
    assert_eq!(r.cases()[1].response_status, Some(200));
    let oracle = h.oracle_trace_map();
    let uris: Vec<&str> = oracle.mains.values().map(|m| m.uri.as_str()).collect();
    assert_eq!(uris, ["/users", format!("/users/{id}").as_str()]);
}

#[tokio::test]
async fn cases_never_overlap() {
    let h = harness(serde_json::from_str::<Value>(bfftrace::harness::DEFAULT_SCHEDULE).unwrap()["rules"].clone()).await;
    let model = model();
    let deps = infer_dependencies(&model);
    let cfg = FuzzConfig {
        budget_sequences: Some(12),
        oversize_length: 512,
        ..FuzzConfig::default()
    };
    let ex = executor(&h.endpoint(Service::Bff));
    let mut windows = Vec::new();
    for s in generate_sequences(&model, &deps, &cfg, 3).unwrap() {
        let r = ex.execute_sequence(&model, s).await;
        assert!(r.sequence.respects_dependency_order());
        windows.extend(r.cases().iter().filter_map(|c| c.window()));
    }
    assert!(windows.len() >= 12);
    let quiet_us = QUIET.as_micros() as i64;
    for pair in windows.windows(2) {
        let ((_, recv), (next_sent, _)) = (pair[0], pair[1]);
        assert!(recv + quiet_us <= next_sent, "{recv} + {quiet_us} > {next_sent}");
    }
}

#[tokio::test]
async fn unreachable_target_aborts() {
    let dead: Endpoint = loopback(free_port()).into();
    let cases = vec![
        FuzzCase::new("getUser").with_binding("userId", json!("u-1")),
        FuzzCase::new("getUser").with_binding("userId", json!("u-2")),
    ];
    let r = executor(&dead).execute_sequence(&model(), seq(cases)).await;
    assert!(r.aborted.as_deref().unwrap().starts_with("target unreachable"));
    assert!(r.cases().iter().all(|c| c.outcome == CaseOutcome::NotSent && !c.was_sent()));
}

#[tokio::test]
async fn slow_response_times_out_as_status_zero() {
    let h = harness(json!([{
        "route": "GET /products/*",
        "trigger": { "kind": "always" },
        "behavior": { "kind": "delay", "ms": 1500 }
    }]))
    .await;
    let ex = executor(&h.endpoint(Service::Bff))
        .with_request_timeout(Duration::from_millis(200))
        .unwrap();
    let cases = vec![
        FuzzCase::new("getProduct").with_binding("productId", json!("p-1")),
        FuzzCase::new("getUser").with_binding("userId", json!("u-1")),
    ];
    let r = ex.execute_sequence(&model(), seq(cases)).await;
    assert_eq!(r.cases()[0].outcome, CaseOutcome::TimedOut);
    assert_eq!(r.cases()[0].response_status, Some(0));
    assert_eq!(r.aborted.as_deref(), Some("no response within 200 ms"));
    assert_eq!(r.cases()[1].outcome, CaseOutcome::NotSent);
}

#[tokio::test]
async fn unknown_operation_aborts() {
    let h = harness(json!([])).await;
    let r = executor(&h.endpoint(Service::Bff))
        .execute_sequence(&model(), seq(vec![FuzzCase::new("deleteEverything")]))
        .await;
    assert!(r.aborted.unwrap().contains("deleteEverything"));
}
