mod common;

use std::net::SocketAddr;
use std::time::Duration;

use bfftrace::control::{api, Controller, RunStatus};
use bfftrace::harness::FaultSchedule;
use bfftrace::store::{RunFilter, RunStore, RunSummary};
use bfftrace_core::capture::LogDialect;
use bfftrace_core::correlate::TraceMap;
use bfftrace_core::fixtures;
use bfftrace_core::fuzz::FuzzConfig;
use bfftrace_core::report::{EdgeKind, ErrorReport, GraphModel, NodeKind};
use bfftrace_core::run::RunConfig;
use bfftrace_core::Endpoint;
use common::{free_port, loopback, plain_client, testbed};
use reqwest::StatusCode;
use serde_json::{json, Value};

struct Api {
    base: String,
    client: reqwest::Client,
    controller: Controller,
    _dir: tempfile::TempDir,
}

async fn serve(store: RunStore, dir: tempfile::TempDir) -> Api {
    let controller = Controller::new(store);
    let listener = tokio::net::TcpListener::bind(loopback(0)).await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let router = api::router(controller.clone());
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    Api {
        base: format!("http://{addr}"),
        client: plain_client(),
        controller,
        _dir: dir,
    }
}

async fn api() -> Api {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path().join("runs")).unwrap();
    serve(store, dir).await
}

impl Api {
    async fn get(&self, path: &str) -> reqwest::Response {
        self.client.get(format!("{}{path}", self.base)).send().await.unwrap()
    }

    async fn post(&self, body: impl Into<reqwest::Body>) -> reqwest::Response {
        self.client
            .post(format!("{}/api/runs", self.base))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap()
    }

    async fn start(&self, config: &RunConfig) -> String {
        let resp = self.post(serde_json::to_vec(config).unwrap()).await;
        assert_eq!(resp.status(), StatusCode::CREATED);
        resp.json::<Value>().await.unwrap()["run_id"].as_str().unwrap().to_string()
    }

    async fn wait(&self, id: &str) -> RunStatus {
        for _ in 0..400 {
            let s: RunStatus = self.get(&format!("/api/runs/{id}")).await.json().await.unwrap();
            if s.phase.is_terminal() {
                return s;
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
        panic!("run {id} did not finish");
    }
}

async fn error_code(resp: reqwest::Response, status: StatusCode) -> String {
    assert_eq!(resp.status(), status);
    let body: Value = resp.json().await.unwrap();
    assert!(body["message"].is_string());
    body["code"].as_str().unwrap().to_string()
}

fn ingest_config(dir: &std::path::Path, name: &str) -> RunConfig {
    let log = dir.join(name);
    std::fs::write(&log, fixtures::ZEEK_HTTP_LOG).unwrap();
    RunConfig::ingest_only(fixtures::ZEEK_HTTP_BFF.parse().unwrap(), log, LogDialect::ZeekHttp)
}

#[tokio::test]
async fn ingest_run_through_every_endpoint() {
    let api = api().await;
    let id = api.start(&ingest_config(api._dir.path(), "a.log")).await;
    let status = api.wait(&id).await;
    assert_eq!(status.phase, bfftrace::control::Phase::Done);

    let report: ErrorReport = api.get(&format!("/api/runs/{id}/report")).await.json().await.unwrap();
    assert_eq!(report.run_id, id);
    assert_eq!(report.section_findings.len(), 4);

    let text = api.get(&format!("/api/runs/{id}/report?format=text")).await;
    assert!(text.headers()["content-type"].to_str().unwrap().starts_with("text/plain"));
    assert!(text.text().await.unwrap().contains(&id));

    let map: TraceMap = api.get(&format!("/api/runs/{id}/traces")).await.json().await.unwrap();
    assert_eq!(map, api.controller.traces(&id).unwrap());

    let trace = &map.entries[0].id;
    let graph: GraphModel = api
        .get(&format!("/api/runs/{id}/graph/{trace}"))
        .await
        .json()
        .await
        .unwrap();
    assert_eq!(graph, api.controller.graph(&id, trace).unwrap());
}

#[tokio::test]
async fn history_is_newest_first_and_matches_the_store() {
    let api = api().await;
    let mut ids = Vec::new();
    for i in 0..3 {
        let id = api.start(&ingest_config(api._dir.path(), &format!("{i}.log"))).await;
        api.wait(&id).await;
        ids.push(id);
        tokio::time::sleep(Duration::from_millis(3)).await;
    }
    let listed: Vec<RunSummary> = api.get("/api/runs").await.json().await.unwrap();
    ids.reverse();
    assert_eq!(listed.iter().map(|s| s.run_id.clone()).collect::<Vec<_>>(), ids);
    assert_eq!(listed, api.controller.store().list_runs(&RunFilter::default()).unwrap());

    let completed: Vec<RunSummary> = api.get("/api/runs?status=completed").await.json().await.unwrap();
    assert_eq!(completed.len(), 3);
    let none: Vec<RunSummary> = api.get("/api/runs?status=aborted").await.json().await.unwrap();
    assert!(none.is_empty());
    let since = listed[0].created_at;
    let recent: Vec<RunSummary> = api.get(&format!("/api/runs?since={since}")).await.json().await.unwrap();
    assert!(recent.iter().all(|s| s.created_at >= since));
    assert!(recent.iter().any(|s| s.run_id == ids[0]));
}

#[tokio::test]
async fn bad_requests_are_400() {
    let api = api().await;
    assert_eq!(error_code(api.post("{").await, StatusCode::BAD_REQUEST).await, "InvalidConfig");
    assert_eq!(error_code(api.post("{}").await, StatusCode::BAD_REQUEST).await, "InvalidConfig");
    let no_spec = json!({ "bff": "127.0.0.1:1", "backend_proxies": [{ "listen": "127.0.0.1:2", "upstream": "127.0.0.1:3" }] });
    assert_eq!(
        error_code(api.post(no_spec.to_string()).await, StatusCode::BAD_REQUEST).await,
        "InvalidConfig"
    );
    assert_eq!(
        error_code(api.get("/api/runs?status=sleeping").await, StatusCode::BAD_REQUEST).await,
        "InvalidConfig"
    );
    let id = api.start(&ingest_config(api._dir.path(), "x.log")).await;
    api.wait(&id).await;
    assert_eq!(
        error_code(api.get(&format!("/api/runs/{id}/report?format=xml")).await, StatusCode::BAD_REQUEST).await,
        "InvalidConfig"
    );
    assert!(api.get("/api/runs").await.json::<Vec<Value>>().await.unwrap().len() == 1);
}

#[tokio::test]
async fn unknown_things_are_404() {
    let api = api().await;
    for path in ["/api/runs/nope", "/api/runs/nope/report", "/api/runs/nope/traces", "/api/runs/nope/graph/t-1", "/elsewhere"] {
        assert_eq!(error_code(api.get(path).await, StatusCode::NOT_FOUND).await, "NotFound", "{path}");
    }
    let id = api.start(&ingest_config(api._dir.path(), "x.log")).await;
    api.wait(&id).await;
    assert_eq!(
        error_code(api.get(&format!("/api/runs/{id}/graph/t-999")).await, StatusCode::NOT_FOUND).await,
        "NotFound"
    );
}

#[tokio::test]
async fn unfinished_runs_are_409() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path().join("runs")).unwrap();
    let config = ingest_config(dir.path(), "x.log");
    store
        .save_run(&bfftrace_core::run::RunRecord::running("pending", 1, config))
        .unwrap();
    let api = serve(store, dir).await;
    for path in ["/api/runs/pending/report", "/api/runs/pending/traces"] {
        assert_eq!(error_code(api.get(path).await, StatusCode::CONFLICT).await, "NotReady");
    }
}

#[tokio::test]
async fn live_errors_map_to_their_statuses() {
    let bed = testbed(
        &FaultSchedule::default(),
        FuzzConfig {
            budget_sequences: Some(4),
            quiescence_ms: 100,
            ..FuzzConfig::default()
        },
    )
    .await;
    let api = serve(RunStore::open(bed.store_path()).unwrap(), tempfile::tempdir().unwrap()).await;

    let mut dead = bed.config.clone();
    dead.bff = Some(loopback(free_port()).into());
    let resp = api.post(serde_json::to_vec(&dead).unwrap()).await;
    assert_eq!(error_code(resp, StatusCode::BAD_GATEWAY).await, "TargetUnreachable");

    let taken = std::net::TcpListener::bind(loopback(0)).unwrap();
    let mut clash = bed.config.clone();
    clash.bff_proxy = Some(taken.local_addr().unwrap().into());
    let resp = api.post(serde_json::to_vec(&clash).unwrap()).await;
    assert_eq!(error_code(resp, StatusCode::CONFLICT).await, "PortConflict");

    let id = api.start(&bed.config).await;
    let mut second = bed.config.clone();
    second.backend_proxies.iter_mut().for_each(|r| r.listen = loopback(free_port()).into());
    let resp = api.post(serde_json::to_vec(&second).unwrap()).await;
    assert_eq!(error_code(resp, StatusCode::CONFLICT).await, "Busy");
    let running: Vec<RunSummary> = api.get("/api/runs?status=running").await.json().await.unwrap();
    assert_eq!(running.len(), 1);
    assert_eq!(api.wait(&id).await.phase, bfftrace::control::Phase::Done);
}

#[tokio::test]
async fn leak_behind_a_healthy_main_is_one_red_edge() {
    // popularity is optional, so a failing popularity call leaves the listing intact
    let schedule = FaultSchedule::from_json(
        &json!({ "rules": [{
            "route": "GET /popularity",
            "trigger": { "kind": "always" },
            "behavior": { "kind": "status-500-with-stacktrace", "runtime": "java" }
        }]})
        .to_string(),
    )
    .unwrap();
    let bed = testbed(
        &schedule,
        FuzzConfig {
            budget_sequences: Some(1),
            max_sequence_length: 1,
            quiescence_ms: 20,
            ..FuzzConfig::default()
        },
    )
    .await;
    let api = serve(RunStore::open(bed.store_path()).unwrap(), tempfile::tempdir().unwrap()).await;
    let id = api.start(&bed.config).await;
    assert_eq!(api.wait(&id).await.phase, bfftrace::control::Phase::Done);

    let report: ErrorReport = api.get(&format!("/api/runs/{id}/report")).await.json().await.unwrap();
    let sub_only = report.group(bfftrace_core::classify::Category::LeakSubOnly);
    assert_eq!(sub_only.items.len(), 1);
    let trace_id = sub_only.items[0].trace_id.clone();

    let graph: GraphModel = api
        .get(&format!("/api/runs/{id}/graph/{trace_id}"))
        .await
        .json()
        .await
        .unwrap();
    let red: Vec<_> = graph.highlighted().collect();
    assert_eq!(red.len(), 1);
    assert_eq!(red[0].kind, EdgeKind::Response);
    assert_eq!(red[0].status, Some(500));
    assert_eq!(graph.node("client").unwrap().kind, NodeKind::Client);
    assert!(graph.edges.iter().all(|e| e.data.label.parse::<Endpoint>().is_ok()));
    let evidence = red[0].evidence.as_ref().unwrap();
    assert_eq!(evidence.pattern_id, "java-stacktrace");

    // the full captured body behind the edge is in the trace map
    let map: TraceMap = api.get(&format!("/api/runs/{id}/traces")).await.json().await.unwrap();
    let entry = map.entry(&trace_id).unwrap();
    let payload = red[0].payload_ref.as_ref().unwrap();
    let index: usize = payload.event.strip_prefix("sub-").unwrap().parse().unwrap();
    let body = entry.subs[index].resp_body.as_ref().unwrap().text_lossy().into_owned();
    assert!(body.contains(&evidence.matched_excerpt));
}

#[tokio::test]
async fn responses_allow_cross_origin_reads() {
    let api = api().await;
    let resp = api
        .client
        .get(format!("{}/api/runs", api.base))
        .header("origin", "http://localhost:5173")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}
