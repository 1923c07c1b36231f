mod common;

use bfftrace::harness::{
    start_harness, FaultSchedule, HarnessError, HarnessPorts, OracleSub, Service, DEFAULT_SCHEDULE, ORACLE_HEADER,
};
use bfftrace_core::classify::{detect_leak, EvidenceLocation, PatternSet};
use common::plain_client;
use serde_json::{json, Value};

fn schedule(rules: Value) -> FaultSchedule {
    FaultSchedule::from_json(&json!({ "rules": rules }).to_string()).unwrap()
}

fn leak_pattern(body: &[u8]) -> Option<String> {
    detect_leak(body, &PatternSet::builtin(), EvidenceLocation::MainResponse).map(|e| e.pattern_id)
}

#[tokio::test]
async fn listing_aggregates_two_backends() {
    let h = start_harness(&FaultSchedule::default(), HarnessPorts::from_base(0)).await.unwrap();
    let resp = plain_client()
        .get(format!("http://{}/products", h.addr(Service::Bff)))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let label = resp.headers()[ORACLE_HEADER].to_str().unwrap().to_string();
    let body: Value = resp.json().await.unwrap();
    let items = body["items"].as_array().unwrap();
    assert!(!items.is_empty());
    // price comes from products, popularity from orders
    assert!(items.iter().all(|i| i["price"].is_number() && i["popularity"].is_number()));
    assert!(items.iter().any(|i| i["popularity"].as_u64().unwrap() > 0));

    let oracle = h.oracle_trace_map();
    let services: Vec<Service> = oracle.mains[&label].subs.iter().map(|s| s.service).collect();
    assert_eq!(services, [Service::Products, Service::Orders]);
    h.stop().await;
}

#[tokio::test]
async fn java_stacktrace_from_a_backend() {
    let h = start_harness(
        &schedule(json!([{
            "route": "GET /orders/*",
            "trigger": { "kind": "always" },
            "behavior": { "kind": "status-500-with-stacktrace", "runtime": "java" }
        }])),
        HarnessPorts::from_base(0),
    )
    .await
    .unwrap();
    let client = plain_client();
    let direct = client
        .get(format!("http://{}/orders/o-1", h.addr(Service::Orders)))
        .send()
        .await
        .unwrap();
    assert_eq!(direct.status(), 500);
    assert_eq!(leak_pattern(&direct.bytes().await.unwrap()).as_deref(), Some("java-stacktrace"));

    // the BFF sanitizes it
    let main = client
        .get(format!("http://{}/orders/o-1", h.addr(Service::Bff)))
        .send()
        .await
        .unwrap();
    assert_eq!(main.status(), 500);
    assert_eq!(leak_pattern(&main.bytes().await.unwrap()), None);
    h.stop().await;
}

#[tokio::test]
async fn forwarded_exception_reaches_the_client() {
    let h = start_harness(
        &schedule(json!([{
            "route": "GET /users/*",
            "trigger": { "kind": "param-equals", "name": "userId", "value": "u-7" },
            "behavior": { "kind": "forward-exception-through-bff", "runtime": "python" }
        }])),
        HarnessPorts::from_base(0),
    )
    .await
    .unwrap();
    let client = plain_client();
    let backend = client
        .get(format!("http://{}/users/u-7", h.addr(Service::Users)))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    let main = client
        .get(format!("http://{}/users/u-7", h.addr(Service::Bff)))
        .send()
        .await
        .unwrap();
    assert_eq!(main.status(), 500);
    let text = main.text().await.unwrap();
    assert_eq!(leak_pattern(text.as_bytes()).as_deref(), Some("python-traceback"));
    assert!(text.contains(backend.lines().last().unwrap()));

    let ok = client
        .get(format!("http://{}/users/u-8", h.addr(Service::Bff)))
        .send()
        .await
        .unwrap();
    assert_eq!(ok.status(), 200);
    h.stop().await;
}

#[tokio::test]
async fn oracle_is_empty_without_traffic() {
    let h = start_harness(&FaultSchedule::default(), HarnessPorts::from_base(0)).await.unwrap();
    let oracle = h.oracle_trace_map();
    assert!(oracle.mains.is_empty());
    assert!(oracle.unlabeled.is_empty());
    h.stop().await;
}

#[tokio::test]
async fn create_order_fans_out_to_three() {
    let h = start_harness(&FaultSchedule::default(), HarnessPorts::from_base(0)).await.unwrap();
    let resp = plain_client()
        .post(format!("http://{}/orders", h.addr(Service::Bff)))
        .json(&json!({ "productId": "p-1", "userId": "u-1", "quantity": 2 }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 201);
    let oracle = h.oracle_trace_map();
    assert_eq!(oracle.mains.len(), 1);
    let main = oracle.mains.values().next().unwrap();
    assert_eq!((main.method.as_str(), main.uri.as_str()), ("POST", "/orders"));
    let sub = |service, method: &str, uri: &str| OracleSub {
        service,
        method: method.into(),
        uri: uri.into(),
    };
    assert_eq!(
        main.subs,
        [
            sub(Service::Users, "GET", "/users/u-1"),
            sub(Service::Products, "GET", "/products/p-1"),
            sub(Service::Orders, "POST", "/orders"),
        ]
    );
    assert_eq!(oracle.sub_count(), 3);
    h.stop().await;
}

#[tokio::test]
async fn unlabeled_backend_calls_are_kept_apart() {
    let h = start_harness(&FaultSchedule::default(), HarnessPorts::from_base(0)).await.unwrap();
    plain_client()
        .get(format!("http://{}/users/u-1", h.addr(Service::Users)))
        .send()
        .await
        .unwrap();
    let oracle = h.oracle_trace_map();
    assert!(oracle.mains.is_empty());
    assert_eq!(oracle.unlabeled.len(), 1);
    h.stop().await;
}

#[tokio::test]
async fn serves_the_fixture_spec() {
    let h = start_harness(&FaultSchedule::default(), HarnessPorts::from_base(0)).await.unwrap();
    let spec: Value = plain_client()
        .get(format!("http://{}/openapi.json", h.addr(Service::Bff)))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let expected: Value = serde_json::from_str(bfftrace_core::fixtures::HARNESS_OPENAPI).unwrap();
    assert_eq!(spec, expected);
    h.stop().await;
}

#[tokio::test]
async fn nth_request_fires_once() {
    let h = start_harness(
        &schedule(json!([{
            "route": "GET /popularity",
            "trigger": { "kind": "nth-request", "n": 2 },
            "behavior": { "kind": "status-503" }
        }])),
        HarnessPorts::from_base(0),
    )
    .await
    .unwrap();
    let client = plain_client();
    let mut statuses = Vec::new();
    for _ in 0..4 {
        let r = client
            .get(format!("http://{}/popularity", h.addr(Service::Orders)))
            .send()
            .await
            .unwrap();
        statuses.push(r.status().as_u16());
    }
    assert_eq!(statuses, [200, 503, 200, 200]);
    h.stop().await;
}

#[tokio::test]
async fn taken_port_is_bind_failed() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let ports = HarnessPorts {
        bff: 0,
        products: port,
        orders: 0,
        users: 0,
    };
    let err = start_harness(&FaultSchedule::default(), ports).await.err().unwrap();
    assert!(matches!(err, HarnessError::BindFailed { service: Service::Products, .. }), "{err}");
}

#[tokio::test]
async fn unknown_route_is_rejected() {
    let bad = schedule(json!([{
        "route": "GET /nowhere",
        "trigger": { "kind": "always" },
        "behavior": { "kind": "status-503" }
    }]));
    let err = start_harness(&bad, HarnessPorts::from_base(0)).await.err().unwrap();
    assert!(matches!(err, HarnessError::Schedule(_)), "{err}");
}

#[tokio::test]
async fn default_schedule_starts() {
    let h = start_harness(&FaultSchedule::from_json(DEFAULT_SCHEDULE).unwrap(), HarnessPorts::from_base(0))
        .await
        .unwrap();
    h.stop().await;
}
