//! Serial execution of test sequences against the BFF.

use std::time::Duration;

use bfftrace_core::api_model::ApiModel;
use bfftrace_core::capture::CapturedBody;
use bfftrace_core::fuzz::{build_request, resolve_bindings, BodyDigest, CaseOutcome, SequenceResult, TestSequence};
use bfftrace_core::Endpoint;
use reqwest::header::{HeaderMap, HeaderName, HeaderValue};
use reqwest::Method;
use sha2::{Digest, Sha256};

use crate::clock::now_micros;

pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(10);

/// Sends the cases of a sequence one at a time, waiting `quiescence`
/// after every response.
#[derive(Debug, Clone)]
pub struct Executor {
    client: reqwest::Client,
    base: String,
    timeout: Duration,
    quiescence: Duration,
    static_headers: HeaderMap,
}

fn client(timeout: Duration) -> reqwest::Result<reqwest::Client> {
    reqwest::Client::builder()
        .timeout(timeout)
        .no_proxy()
        .tcp_nodelay(true)
        .build()
}

/// Path part of an OpenAPI server URL, without a trailing slash.
pub fn base_path(base_url: &str) -> &str {
    let rest = base_url
        .strip_prefix("http://")
        .or_else(|| base_url.strip_prefix("https://"))
        .map(|r| r.find('/').map_or("", |i| &r[i..]))
        .unwrap_or(base_url);
    rest.trim_end_matches('/')
}

pub fn digest(bytes: &[u8]) -> BodyDigest {
    let (captured, truncated) = CapturedBody::capture(bytes);
    BodyDigest {
        sha256: hex::encode(Sha256::digest(bytes)),
        len: bytes.len(),
        captured: Some(captured),
        truncated,
    }
}

fn header_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> HeaderMap {
    let mut out = HeaderMap::new();
    for (k, v) in pairs {
        // mutated header values may not be valid on the wire; those are dropped
        if let (Ok(name), Ok(value)) = (HeaderName::from_bytes(k.as_bytes()), HeaderValue::from_str(v)) {
            out.append(name, value);
        }
    }
    out
}

impl Executor {
    pub fn new<'a>(
        target: &Endpoint,
        base_url: &str,
        quiescence: Duration,
        static_headers: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> reqwest::Result<Self> {
        Ok(Self {
            client: client(REQUEST_TIMEOUT)?,
            timeout: REQUEST_TIMEOUT,
            base: format!("http://{target}{}", base_path(base_url)),
            quiescence,
            static_headers: header_pairs(static_headers),
        })
    }

    /// Replaces the default [`REQUEST_TIMEOUT`].
    pub fn with_request_timeout(mut self, timeout: Duration) -> reqwest::Result<Self> {
        self.client = client(timeout)?;
        self.timeout = timeout;
        Ok(self)
    }

    pub fn quiescence(&self) -> Duration {
        self.quiescence
    }

    pub async fn execute_sequence(&self, model: &ApiModel, mut seq: TestSequence) -> SequenceResult {
        let mut aborted: Option<String> = None;
        for i in 0..seq.cases.len() {
            if aborted.is_some() {
                seq.cases[i].outcome = CaseOutcome::NotSent;
                continue;
            }
            if let Err(e) = resolve_bindings(&mut seq, i) {
                seq.cases[i].outcome = CaseOutcome::DependencyUnsatisfied {
                    param: e.param,
                    producer_case: e.producer_case,
                    producer_field: e.producer_field,
                };
                continue;
            }
            let case = &mut seq.cases[i];
            let Some(op) = model.operation(&case.operation) else {
                case.outcome = CaseOutcome::NotSent;
                aborted = Some(format!("operation `{}` is not in the API model", case.operation));
                continue;
            };
            let prepared = build_request(op, case);
            let method = Method::from_bytes(prepared.method.as_bytes()).expect("model methods are valid");
            let mut req = self
                .client
                .request(method, format!("{}{}", self.base, prepared.path_and_query))
                .headers(self.static_headers.clone())
                .headers(header_pairs(prepared.headers.iter().map(|(k, v)| (k.as_str(), v.as_str()))));
            if let Some(body) = prepared.body {
                req = req.body(body);
            }

            let sent_at = now_micros();
            let outcome = match req.send().await {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    resp.bytes().await.map(|b| (status, b))
                }
                Err(e) => Err(e),
            };
            match outcome {
                Ok((status, bytes)) => {
                    case.sent_at = Some(sent_at);
                    case.received_at = Some(now_micros());
                    case.response_status = Some(status);
                    case.response_body_digest = Some(digest(&bytes));
                    case.outcome = CaseOutcome::Completed;
                }
                Err(e) if e.is_connect() => {
                    case.outcome = CaseOutcome::NotSent;
                    aborted = Some(format!("target unreachable: {e}"));
                    continue;
                }
                Err(e) => {
                    case.sent_at = Some(sent_at);
                    case.received_at = Some(now_micros());
                    case.response_status = Some(0);
                    case.outcome = CaseOutcome::TimedOut;
                    aborted = Some(if e.is_timeout() {
                        format!("no response within {} ms", self.timeout.as_millis())
                    } else {
                        format!("request failed: {e}")
                    });
                }
            }
            tokio::time::sleep(self.quiescence).await;
        }
        SequenceResult { sequence: seq, aborted }
    }
}
