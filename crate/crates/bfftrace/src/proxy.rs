//! Logging reverse proxy.
//!
//! Each proxy forwards to one upstream and appends a [`TrafficEvent`] per
//! exchange to a [`CaptureSink`] shared by every proxy of a run.

use std::convert::Infallible;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bfftrace_core::capture::{CaptureLog, CapturedBody, HeaderMap as EventHeaders, TrafficEvent};
use bfftrace_core::Endpoint;
use bytes::Bytes;
use http::{header, HeaderMap, HeaderName, Request, Response, StatusCode};
use http_body_util::{BodyExt, Full};
use hyper::body::Incoming;
use hyper::server::conn::http1;
use hyper::service::service_fn;
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::{TokioExecutor, TokioIo};
use hyper_util::server::graceful::GracefulShutdown;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::clock::now_micros;

const UPSTREAM_TIMEOUT: Duration = Duration::from_secs(30);
const DRAIN_TIMEOUT: Duration = Duration::from_secs(5);

const HOP_BY_HOP: [&str; 9] = [
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "proxy-connection",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
];

#[derive(Debug, thiserror::Error)]
pub enum ProxyError {
    #[error("cannot listen on {addr}: {source}")]
    BindFailed {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("flushing the capture log failed: {0}")]
    Flush(#[source] io::Error),
}

struct SinkState {
    events: Vec<TrafficEvent>,
    file: Option<BufWriter<File>>,
}

/// Ordered event sink for one run. Cloning shares the sink.
#[derive(Clone)]
pub struct CaptureSink {
    run_id: Arc<str>,
    state: Arc<Mutex<SinkState>>,
}

impl CaptureSink {
    pub fn new(run_id: &str) -> Self {
        Self {
            run_id: run_id.into(),
            state: Arc::new(Mutex::new(SinkState {
                events: Vec::new(),
                file: None,
            })),
        }
    }

    /// Also appends every event to `path` as native-jsonl.
    pub fn with_file(run_id: &str, path: &Path) -> io::Result<Self> {
        let sink = Self::new(run_id);
        sink.lock().file = Some(BufWriter::new(File::create(path)?));
        Ok(sink)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, SinkState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn push(&self, ev: TrafficEvent) {
        let mut state = self.lock();
        if let Some(file) = state.file.as_mut() {
            let line = serde_json::to_string(&ev).expect("events serialize");
            if let Err(e) = writeln!(file, "{line}") {
                tracing::warn!("capture log write failed: {e}");
            }
        }
        state.events.push(ev);
    }

    pub fn len(&self) -> usize {
        self.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flush(&self) -> io::Result<()> {
        match self.lock().file.as_mut() {
            Some(f) => f.flush(),
            None => Ok(()),
        }
    }

    /// Events so far, sorted by `ts` (ties in arrival order).
    pub fn snapshot(&self) -> CaptureLog {
        CaptureLog::new(self.run_id.to_string(), self.lock().events.clone())
    }
}

struct Forwarder {
    upstream: Endpoint,
    client: Client<HttpConnector, Full<Bytes>>,
    sink: CaptureSink,
}

pub struct ProxyHandle {
    local_addr: SocketAddr,
    upstream: Endpoint,
    sink: CaptureSink,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl ProxyHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn upstream(&self) -> &Endpoint {
        &self.upstream
    }

    pub fn sink(&self) -> &CaptureSink {
        &self.sink
    }

    /// Stops accepting, lets in-flight exchanges finish and flushes the sink.
    pub async fn stop(self) -> Result<(), ProxyError> {
        let _ = self.shutdown.send(true);
        let _ = self.task.await;
        self.sink.flush().map_err(ProxyError::Flush)
    }
}

/// Binds `listen` and forwards every request to `upstream`.
pub async fn start_proxy(listen: SocketAddr, upstream: Endpoint, sink: CaptureSink) -> Result<ProxyHandle, ProxyError> {
    let listener = TcpListener::bind(listen)
        .await
        .map_err(|source| ProxyError::BindFailed { addr: listen, source })?;
    let local_addr = listener
        .local_addr()
        .map_err(|source| ProxyError::BindFailed { addr: listen, source })?;
    let mut connector = HttpConnector::new();
    connector.set_nodelay(true);
    let forwarder = Arc::new(Forwarder {
        upstream: upstream.clone(),
        client: Client::builder(TokioExecutor::new())
            .pool_idle_timeout(Duration::from_secs(10))
            .build(connector),
        sink: sink.clone(),
    });
    let (shutdown, rx) = watch::channel(false);
    let task = tokio::spawn(accept_loop(listener, forwarder, rx));
    Ok(ProxyHandle {
        local_addr,
        upstream,
        sink,
        shutdown,
        task,
    })
}

async fn accept_loop(listener: TcpListener, forwarder: Arc<Forwarder>, mut shutdown: watch::Receiver<bool>) {
    let graceful = GracefulShutdown::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => {
                let (stream, peer) = match accepted {
                    Ok(conn) => conn,
                    Err(e) => {
                        tracing::warn!("accept failed: {e}");
                        tokio::time::sleep(Duration::from_millis(20)).await;
                        continue;
                    }
                };
                let _ = stream.set_nodelay(true);
                let fw = forwarder.clone();
                let svc = service_fn(move |req| {
                    let fw = fw.clone();
                    async move { Ok::<_, Infallible>(fw.exchange(req, peer).await) }
                });
                let conn = graceful.watch(http1::Builder::new().serve_connection(TokioIo::new(stream), svc));
                tokio::spawn(async move {
                    let _ = conn.await;
                });
            }
            _ = shutdown.changed() => break,
        }
    }
    drop(listener);
    let _ = tokio::time::timeout(DRAIN_TIMEOUT, graceful.shutdown()).await;
}

fn is_hop_by_hop(name: &HeaderName, listed: &[String]) -> bool {
    let n = name.as_str();
    HOP_BY_HOP.contains(&n) || listed.iter().any(|l| l == n)
}

/// Header names named by the `Connection` header are hop-by-hop too.
fn connection_listed(headers: &HeaderMap) -> Vec<String> {
    headers
        .get_all(header::CONNECTION)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .map(|s| s.trim().to_ascii_lowercase())
        .filter(|s| !s.is_empty())
        .collect()
}

fn copy_end_to_end(from: &HeaderMap, to: &mut HeaderMap) {
    let listed = connection_listed(from);
    for (name, value) in from {
        if !is_hop_by_hop(name, &listed) {
            to.append(name.clone(), value.clone());
        }
    }
}

fn header_record(headers: &HeaderMap) -> EventHeaders {
    let mut out = EventHeaders::new();
    for (name, value) in headers {
        let v = String::from_utf8_lossy(value.as_bytes()).into_owned();
        out.entry(name.as_str().to_string())
            .and_modify(|cur: &mut String| {
                cur.push_str(", ");
                cur.push_str(&v);
            })
            .or_insert(v);
    }
    out
}

fn body_record(bytes: &[u8]) -> (CapturedBody, bool) {
    CapturedBody::capture(bytes)
}

impl Forwarder {
    async fn exchange(&self, req: Request<Incoming>, peer: SocketAddr) -> Response<Full<Bytes>> {
        let ts = now_micros();
        let (parts, body) = req.into_parts();
        let req_bytes = match body.collect().await {
            Ok(c) => c.to_bytes(),
            Err(_) => return plain(StatusCode::BAD_REQUEST, "request body could not be read"),
        };
        let path_and_query = parts.uri.path_and_query().map(|p| p.as_str()).unwrap_or("/").to_string();

        let mut ev = TrafficEvent::new(ts, &peer.into(), &self.upstream, parts.method.as_str(), &path_and_query, 0);
        ev.req_headers = Some(header_record(&parts.headers));
        if !req_bytes.is_empty() {
            let (b, truncated) = body_record(&req_bytes);
            ev.req_body = Some(b);
            ev.req_body_truncated = truncated;
        }

        let mut out = Request::new(Full::new(req_bytes));
        *out.method_mut() = parts.method.clone();
        *out.uri_mut() = match format!("http://{}{}", self.upstream, path_and_query).parse() {
            Ok(uri) => uri,
            Err(_) => return plain(StatusCode::BAD_REQUEST, "request target could not be forwarded"),
        };
        copy_end_to_end(&parts.headers, out.headers_mut());

        let response = match tokio::time::timeout(UPSTREAM_TIMEOUT, self.client.request(out)).await {
            Ok(Ok(resp)) => {
                let (rparts, rbody) = resp.into_parts();
                match rbody.collect().await {
                    Ok(c) => Some((rparts, c.to_bytes())),
                    Err(_) => None,
                }
            }
            Ok(Err(e)) => {
                tracing::debug!("upstream {} failed: {e}", self.upstream);
                None
            }
            Err(_) => None,
        };

        let reply = match response {
            Some((rparts, rbytes)) => {
                ev.status = rparts.status.as_u16();
                ev.resp_headers = Some(header_record(&rparts.headers));
                let (b, truncated) = body_record(&rbytes);
                ev.resp_body = Some(b);
                ev.resp_body_truncated = truncated;
                let mut reply = Response::new(Full::new(rbytes));
                *reply.status_mut() = rparts.status;
                copy_end_to_end(&rparts.headers, reply.headers_mut());
                reply
            }
            None => {
                let reply = plain(StatusCode::BAD_GATEWAY, "upstream unreachable");
                ev.status = 502;
                ev.proxy_generated = true;
                ev.resp_headers = Some(header_record(reply.headers()));
                ev.resp_body = Some(CapturedBody(b"upstream unreachable".to_vec()));
                reply
            }
        };
        self.sink.push(ev);
        reply
    }
}

fn plain(status: StatusCode, text: &'static str) -> Response<Full<Bytes>> {
    let mut resp = Response::new(Full::new(Bytes::from_static(text.as_bytes())));
    *resp.status_mut() = status;
    resp.headers_mut()
        .insert(header::CONTENT_TYPE, header::HeaderValue::from_static("text/plain"));
    resp
}
