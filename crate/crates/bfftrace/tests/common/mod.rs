#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;

use axum::body::Bytes;
use axum::http::{HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use bfftrace::harness::{start_harness, FaultSchedule, HarnessHandle, HarnessPorts, Service, ORACLE_HEADER};
use bfftrace_core::correlate::TraceMap;
use bfftrace_core::fixtures;
use bfftrace_core::fuzz::FuzzConfig;
use bfftrace_core::run::{ProxyRoute, RunConfig, RunMode};
use bfftrace_core::Endpoint;
use tempfile::TempDir;

/// A loopback port nobody listens on right now.
pub fn free_port() -> u16 {
    std::net::TcpListener::bind((Ipv4Addr::LOCALHOST, 0))
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

pub fn loopback(port: u16) -> SocketAddr {
    SocketAddr::from((Ipv4Addr::LOCALHOST, port))
}

/// Status comes from `x-want-status`, the body echoes the request line and
/// body, and `x-want-header` is copied back as `x-echo`.
async fn echo(method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let status = headers
        .get("x-want-status")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok())
        .and_then(|s| StatusCode::from_u16(s).ok())
        .unwrap_or(StatusCode::OK);
    let mut out = format!("{method} {uri}\n").into_bytes();
    out.extend_from_slice(&body);
    let mut resp = (status, out).into_response();
    if let Some(v) = headers.get("x-want-header") {
        resp.headers_mut().insert("x-echo", v.clone());
    }
    resp
}

pub async fn start_stub() -> SocketAddr {
    let listener = tokio::net::TcpListener::bind(loopback(0)).await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, Router::new().fallback(echo)).await.unwrap();
    });
    addr
}

/// The harness with a capture proxy port reserved for each backend, and a
/// live-run config wired to them.
pub struct Testbed {
    pub harness: HarnessHandle,
    pub config: RunConfig,
    pub dir: TempDir,
}

impl Testbed {
    pub fn store_path(&self) -> PathBuf {
        self.dir.path().join("runs")
    }
}

pub async fn testbed(schedule: &FaultSchedule, fuzz: FuzzConfig) -> Testbed {
    let harness = start_harness(schedule, HarnessPorts::from_base(0)).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("openapi.json");
    std::fs::write(&spec, fixtures::HARNESS_OPENAPI).unwrap();

    let mut backend_proxies = Vec::new();
    for s in Service::BACKENDS {
        let listen = loopback(free_port());
        harness.set_upstream(s, listen);
        backend_proxies.push(ProxyRoute {
            listen: listen.into(),
            upstream: harness.endpoint(s),
        });
    }
    let config = RunConfig {
        spec_path: Some(spec),
        bff: Some(harness.endpoint(Service::Bff)),
        bff_proxy: None,
        backend_proxies,
        fuzz,
        patterns_path: None,
        mode: RunMode::LiveProxy,
        ingest: None,
    };
    Testbed { harness, config, dir }
}

type SubKey = (Service, String, String);

/// Differences between a correlated trace map and the harness ground truth.
/// Entries are matched through the label the harness echoes on each main
/// response; sub-requests through the backend they were addressed to.
pub fn oracle_mismatches(map: &TraceMap, harness: &HarnessHandle) -> Vec<String> {
    let oracle = harness.oracle_trace_map();
    let mut problems = Vec::new();
    if !oracle.unlabeled.is_empty() {
        problems.push(format!("{} unlabeled sub-requests in the oracle", oracle.unlabeled.len()));
    }
    if !map.orphans.is_empty() {
        problems.push(format!("{} orphans", map.orphans.len()));
    }

    let mut seen = BTreeMap::new();
    for entry in &map.entries {
        let Some(label) = entry.main.resp_headers.as_ref().and_then(|h| h.get(ORACLE_HEADER)) else {
            problems.push(format!("{} has no oracle label", entry.id));
            continue;
        };
        let Some(truth) = oracle.mains.get(label) else {
            problems.push(format!("{} carries unknown label {label}", entry.id));
            continue;
        };
        if seen.insert(label.clone(), entry.id.clone()).is_some() {
            problems.push(format!("label {label} on two entries"));
        }
        if (truth.method.as_str(), truth.uri.as_str()) != (entry.main.method.as_str(), entry.main.uri.as_str()) {
            problems.push(format!("{} main is {} {}, oracle says {} {}", entry.id, entry.main.method, entry.main.uri, truth.method, truth.uri));
        }
        let got: Vec<Option<SubKey>> = entry
            .subs
            .iter()
            .map(|s| harness.backend_at(&s.resp()).map(|svc| (svc, s.method.clone(), s.uri.clone())))
            .collect();
        let want: Vec<Option<SubKey>> = truth
            .subs
            .iter()
            .map(|s| Some((s.service, s.method.clone(), s.uri.clone())))
            .collect();
        if got != want {
            problems.push(format!("{} subs {got:?}, oracle {want:?}", entry.id));
        }
    }
    if seen.len() != oracle.mains.len() {
        problems.push(format!("{} labelled entries, oracle has {} mains", seen.len(), oracle.mains.len()));
    }
    problems
}

pub fn endpoint(addr: SocketAddr) -> Endpoint {
    addr.into()
}

pub struct Observed {
    pub status: u16,
    pub headers: BTreeMap<String, Vec<u8>>,
    pub body: Vec<u8>,
}

pub async fn observe(resp: reqwest::Response) -> Observed {
    let status = resp.status().as_u16();
    let headers = resp
        .headers()
        .iter()
        .filter(|(k, _)| k.as_str() != "date")
        .map(|(k, v)| (k.to_string(), v.as_bytes().to_vec()))
        .collect();
    let body = resp.bytes().await.unwrap().to_vec();
    Observed { status, headers, body }
}

pub struct Exchange {
    pub method: reqwest::Method,
    pub path: String,
    pub status: u16,
    pub header: Option<String>,
    pub body: Vec<u8>,
}

pub fn random_exchange(rng: &mut impl rand::Rng) -> Exchange {
    const METHODS: [&str; 5] = ["GET", "POST", "PUT", "PATCH", "DELETE"];
    const STATUSES: [u16; 9] = [200, 201, 202, 302, 400, 404, 418, 500, 503];
    let method = reqwest::Method::from_bytes(METHODS[rng.random_range(0..METHODS.len())].as_bytes()).unwrap();
    let segments = rng.random_range(0..4);
    let mut path = String::new();
    for _ in 0..segments {
        path.push('/');
        path.push_str(&format!("s{}", rng.random_range(0..1000u32)));
    }
    if path.is_empty() {
        path.push('/');
    }
    if rng.random_bool(0.5) {
        path.push_str(&format!("?q={}&n={}", rng.random_range(0..100u32), rng.random_range(0..100u32)));
    }
    let len = match rng.random_range(0..4) {
        0 => 0,
        1 => rng.random_range(1..64),
        2 => rng.random_range(64..4096),
        _ => rng.random_range(60_000..80_000),
    };
    let body = if method == reqwest::Method::GET || method == reqwest::Method::DELETE {
        Vec::new()
    } else {
        (0..len).map(|_| rng.random::<u8>()).collect()
    };
    Exchange {
        method,
        path,
        status: STATUSES[rng.random_range(0..STATUSES.len())],
        header: rng.random_bool(0.5).then(|| format!("v{}", rng.random_range(0..1000u32))),
        body,
    }
}

pub async fn send(client: &reqwest::Client, to: SocketAddr, ex: &Exchange) -> Observed {
    let mut req = client
        .request(ex.method.clone(), format!("http://{to}{}", ex.path))
        .header("x-want-status", ex.status.to_string())
        .body(ex.body.clone());
    if let Some(h) = &ex.header {
        req = req.header("x-want-header", h);
    }
    observe(req.send().await.unwrap()).await
}

pub fn plain_client() -> reqwest::Client {
    reqwest::Client::builder().no_proxy().build().unwrap()
}

/// Sends `n` random exchanges straight to a stub and through a capture proxy
/// in front of it, and compares what comes back and what was captured.
pub async fn proxy_transparency(seed: u64, n: usize) -> Result<(), String> {
    use bfftrace::proxy::{start_proxy, CaptureSink};
    use rand::SeedableRng;

    let stub = start_stub().await;
    let sink = CaptureSink::new("transparency");
    let proxy = start_proxy(loopback(0), stub.into(), sink.clone())
        .await
        .map_err(|e| e.to_string())?;
    let client = plain_client();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let ex = random_exchange(&mut rng);
        let direct = send(&client, stub, &ex).await;
        let proxied = send(&client, proxy.local_addr(), &ex).await;
        if direct.status != proxied.status {
            return Err(format!("exchange {i}: status {} direct, {} proxied", direct.status, proxied.status));
        }
        if direct.body != proxied.body {
            return Err(format!("exchange {i}: bodies differ ({} vs {} bytes)", direct.body.len(), proxied.body.len()));
        }
        if direct.headers != proxied.headers {
            return Err(format!("exchange {i}: headers {:?} vs {:?}", direct.headers.keys(), proxied.headers.keys()));
        }
        if sink.len() != i + 1 {
            return Err(format!("exchange {i}: {} events captured", sink.len()));
        }
        let ev = sink.snapshot().events()[i].clone();
        let captured_req = ev.req_body.map(|b| b.0).unwrap_or_default();
        let captured_resp = ev.resp_body.map(|b| b.0).unwrap_or_default();
        let ok = ev.status == ex.status
            && ev.method == ex.method.as_str()
            && ev.uri == ex.path
            && ex.body.starts_with(&captured_req)
            && ev.req_body_truncated == (captured_req.len() < ex.body.len())
            && direct.body.starts_with(&captured_resp)
            && ev.resp_body_truncated == (captured_resp.len() < direct.body.len());
        if !ok {
            return Err(format!("exchange {i}: captured event does not match {} {}", ex.method, ex.path));
        }
    }
    proxy.stop().await.map_err(|e| e.to_string())?;
    Ok(())
}

pub fn harness_model() -> bfftrace_core::api_model::ApiModel {
    use bfftrace_core::api_model::{parse_spec, SpecFormat};
    parse_spec(fixtures::HARNESS_OPENAPI.as_bytes(), SpecFormat::Json).unwrap()
}

/// A record in state `i % 3` (running, completed, aborted) whose content
/// depends on `i`; completed ones carry the analysis of the zeek fixture.
pub fn sample_record(i: usize, run_id: &str, created_at: u64) -> bfftrace_core::run::RunRecord {
    use bfftrace_core::api_model::infer_dependencies;
    use bfftrace_core::capture::{parse_log, LogDialect};
    use bfftrace_core::classify::PatternSet;
    use bfftrace_core::fuzz::{generate_sequences, SequenceResult};
    use bfftrace_core::run::{aggregate, AggregateInput, RunRecord};

    let bff: Endpoint = fixtures::ZEEK_HTTP_BFF.parse().unwrap();
    let mut config = RunConfig::ingest_only(bff.clone(), format!("logs/{i}.log"), LogDialect::ZeekHttp);
    config.fuzz.seed = i as u64;
    config.fuzz.mutation_ratio = (i % 7) as f64 / 7.0;
    let mut rec = RunRecord::running(run_id, created_at, config);

    let model = harness_model();
    let deps = infer_dependencies(&model);
    let fuzz = FuzzConfig {
        budget_sequences: Some(1 + (i % 4) as u64),
        oversize_length: 64,
        ..FuzzConfig::default()
    };
    rec.sequences = generate_sequences(&model, &deps, &fuzz, i as u64)
        .unwrap()
        .map(|sequence| SequenceResult { sequence, aborted: None })
        .collect();
    match i % 3 {
        0 => {}
        1 => {
            let log = parse_log(fixtures::ZEEK_HTTP_LOG, LogDialect::ZeekHttp, run_id).unwrap().log;
            let agg = aggregate(AggregateInput {
                run_id,
                model: &model,
                bff: &bff,
                logs: vec![log],
                sequences: &[],
                patterns: &PatternSet::builtin(),
                quiescence_ms: 250,
            })
            .unwrap();
            rec.complete(agg);
        }
        _ => rec.abort(format!("stopped after {i} sequences ✗")),
    }
    rec
}
