//! Ground truth for correlation: the BFF labels every main request and
//! forwards the label on each sub-request; the backends report what they saw.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Request, State};
use axum::http::HeaderValue;
use axum::middleware::Next;
use axum::response::Response;
use serde::{Deserialize, Serialize};

use super::{Service, ORACLE_HEADER};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSub {
    pub service: Service,
    pub method: String,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleMain {
    pub method: String,
    pub uri: String,
    pub subs: Vec<OracleSub>,
}

/// Main-request label to the sub-requests made on its behalf.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OracleMap {
    pub mains: BTreeMap<String, OracleMain>,
    /// Sub-requests without exactly one known label.
    #[serde(default)]
    pub unlabeled: Vec<OracleSub>,
}

impl OracleMap {
    pub fn sub_count(&self) -> usize {
        self.mains.values().map(|m| m.subs.len()).sum()
    }
}

#[derive(Debug, Default)]
pub(super) struct Oracle {
    next: AtomicU64,
    map: Mutex<OracleMap>,
}

impl Oracle {
    fn lock(&self) -> std::sync::MutexGuard<'_, OracleMap> {
        self.map.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn snapshot(&self) -> OracleMap {
        self.lock().clone()
    }

    fn open(&self, method: &str, uri: &str) -> MainId {
        let id = format!("m-{:06}", self.next.fetch_add(1, Ordering::SeqCst) + 1);
        self.lock().mains.insert(
            id.clone(),
            OracleMain {
                method: method.to_string(),
                uri: uri.to_string(),
                subs: Vec::new(),
            },
        );
        MainId(id)
    }

    fn record(&self, label: Option<&str>, sub: OracleSub) {
        let mut map = self.lock();
        match label.and_then(|l| map.mains.get_mut(l)) {
            Some(main) => main.subs.push(sub),
            None => map.unlabeled.push(sub),
        }
    }
}

fn path_and_query(req: &Request) -> String {
    req.uri().path_and_query().map(|p| p.as_str()).unwrap_or("/").to_string()
}

/// BFF side: label the request and echo the label on the response.
pub(super) async fn label_main(State(oracle): State<Arc<Oracle>>, mut req: Request, next: Next) -> Response {
    let id = oracle.open(req.method().as_str(), &path_and_query(&req));
    let header = HeaderValue::from_str(&id.0).expect("labels are ASCII");
    req.extensions_mut().insert(id);
    let mut resp = next.run(req).await;
    resp.headers_mut().insert(ORACLE_HEADER, header);
    resp
}

/// Backend side: attribute the sub-request to its label.
pub(super) async fn observe_sub(
    State((service, oracle)): State<(Service, Arc<Oracle>)>,
    req: Request,
    next: Next,
) -> Response {
    let labels: Vec<&HeaderValue> = req.headers().get_all(ORACLE_HEADER).iter().collect();
    let label = match labels.as_slice() {
        [one] => one.to_str().ok(),
        _ => None,
    };
    oracle.record(
        label,
        OracleSub {
            service,
            method: req.method().as_str().to_string(),
            uri: path_and_query(&req),
        },
    );
    next.run(req).await
}
