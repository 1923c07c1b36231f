use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode, Uri};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Service, FORWARD_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Runtime {
    Java,
    Python,
    Node,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trigger {
    Always,
    /// Fires on the n-th request (1-based) that matches the route.
    NthRequest { n: u64 },
    /// Fires when a path placeholder, query parameter or top-level JSON
    /// body field called `name` has the text `value`.
    ParamEquals { name: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Behavior {
    #[serde(rename = "status-500-with-stacktrace")]
    Status500WithStacktrace { runtime: Runtime },
    #[serde(rename = "status-500-sanitized")]
    Status500Sanitized,
    #[serde(rename = "status-503")]
    Status503,
    Delay { ms: u64 },
    /// A backend fails with a stack trace and the BFF relays that body.
    ForwardExceptionThroughBff {
        #[serde(default = "default_runtime")]
        runtime: Runtime,
    },
}

fn default_runtime() -> Runtime {
    Runtime::Java
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRule {
    /// When absent, the route is looked up on the backends first, then on the BFF.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<Service>,
    /// `METHOD /path`, where `*` or `{name}` matches one segment.
    pub route: String,
    pub trigger: Trigger,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FaultSchedule {
    #[serde(default)]
    pub rules: Vec<FaultRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("rule {index}: route `{route}` is not `METHOD /path`")]
    BadRoute { index: usize, route: String },
    #[error("rule {index}: no harness endpoint matches `{route}`")]
    UnknownRoute { index: usize, route: String },
    #[error("rule {index}: forward-exception-through-bff must target a backend route")]
    ForwardOnBff { index: usize },
    #[error("rule {index}: nth-request needs n >= 1")]
    ZeroNth { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Seg {
    Lit(String),
    Any,
}

#[derive(Debug, Clone)]
struct RoutePattern {
    method: Method,
    segs: Vec<Seg>,
}

fn segments(path: &str) -> impl Iterator<Item = &str> {
    path.trim_matches('/').split('/').filter(|s| !s.is_empty())
}

impl RoutePattern {
    fn parse(route: &str) -> Option<Self> {
        let (method, path) = route.trim().split_once(' ')?;
        let method = Method::from_bytes(method.trim().to_ascii_uppercase().as_bytes()).ok()?;
        let path = path.trim();
        if !path.starts_with('/') {
            return None;
        }
        let segs = segments(path)
            .map(|s| {
                if s == "*" || (s.starts_with('{') && s.ends_with('}')) {
                    Seg::Any
                } else {
                    Seg::Lit(s.to_string())
                }
            })
            .collect();
        Some(Self { method, segs })
    }

    /// Whether the pattern can match requests to an endpoint `template`.
    fn covers(&self, method: &Method, template: &str) -> bool {
        let t: Vec<&str> = segments(template).collect();
        self.method == method
            && t.len() == self.segs.len()
            && self.segs.iter().zip(&t).all(|(p, t)| match p {
                Seg::Any => true,
                Seg::Lit(l) => l == t || t.starts_with('{'),
            })
    }

    fn matches(&self, method: &Method, path: &str) -> bool {
        let parts: Vec<&str> = segments(path).collect();
        self.method == method
            && parts.len() == self.segs.len()
            && self.segs.iter().zip(&parts).all(|(p, s)| match p {
                Seg::Any => true,
                Seg::Lit(l) => l == s,
            })
    }
}

#[derive(Debug)]
struct CompiledRule {
    pattern: RoutePattern,
    template: &'static str,
    trigger: Trigger,
    behavior: Behavior,
    hits: AtomicU64,
}

/// The rules of a schedule that apply to one service.
#[derive(Debug)]
pub(super) struct ServiceFaults {
    service: Service,
    rules: Vec<CompiledRule>,
}

impl FaultSchedule {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Checks every rule and splits the schedule per service.
    pub(super) fn compile(&self) -> Result<Vec<Arc<ServiceFaults>>, ScheduleError> {
        let mut per: Vec<ServiceFaults> = Service::ALL
            .iter()
            .map(|&service| ServiceFaults {
                service,
                rules: Vec::new(),
            })
            .collect();
        for (index, rule) in self.rules.iter().enumerate() {
            let pattern = RoutePattern::parse(&rule.route).ok_or_else(|| ScheduleError::BadRoute {
                index,
                route: rule.route.clone(),
            })?;
            if matches!(rule.trigger, Trigger::NthRequest { n: 0 }) {
                return Err(ScheduleError::ZeroNth { index });
            }
            let candidates: Vec<Service> = match rule.service {
                Some(s) => vec![s],
                None => vec![Service::Products, Service::Orders, Service::Users, Service::Bff],
            };
            let (service, template) = candidates
                .iter()
                .find_map(|&s| {
                    s.endpoints()
                        .iter()
                        .find(|(m, t)| pattern.covers(m, t))
                        .map(|(_, t)| (s, *t))
                })
                .ok_or_else(|| ScheduleError::UnknownRoute {
                    index,
                    route: rule.route.clone(),
                })?;
            if service == Service::Bff && matches!(rule.behavior, Behavior::ForwardExceptionThroughBff { .. }) {
                return Err(ScheduleError::ForwardOnBff { index });
            }
            per[service.index()].rules.push(CompiledRule {
                pattern,
                template,
                trigger: rule.trigger.clone(),
                behavior: rule.behavior.clone(),
                hits: AtomicU64::new(0),
            });
        }
        Ok(per.into_iter().map(Arc::new).collect())
    }
}

fn param_equals(template: &str, uri: &Uri, body: &[u8], name: &str, value: &str) -> bool {
    let in_path = segments(template)
        .zip(segments(uri.path()))
        .any(|(t, s)| t.strip_prefix('{').and_then(|t| t.strip_suffix('}')) == Some(name) && s == value);
    let in_query = uri.query().is_some_and(|q| {
        q.split('&')
            .filter_map(|kv| kv.split_once('='))
            .any(|(k, v)| k == name && v == value)
    });
    let in_body = serde_json::from_slice::<Value>(body)
        .ok()
        .and_then(|v| v.get(name).cloned())
        .is_some_and(|v| match v {
            Value::String(s) => s == value,
            other => other.to_string().as_str() == value,
        });
    in_path || in_query || in_body
}

impl ServiceFaults {
    fn fire(&self, method: &Method, uri: &Uri, body: &[u8]) -> Option<Behavior> {
        let mut fired = None;
        for rule in &self.rules {
            if !rule.pattern.matches(method, uri.path()) {
                continue;
            }
            let hit = rule.hits.fetch_add(1, Ordering::SeqCst) + 1;
            let fires = match &rule.trigger {
                Trigger::Always => true,
                Trigger::NthRequest { n } => hit == *n,
                Trigger::ParamEquals { name, value } => param_equals(rule.template, uri, body, name, value),
            };
            if fires && fired.is_none() {
                fired = Some(rule.behavior.clone());
            }
        }
        fired
    }
}

pub(super) async fn inject(State(faults): State<Arc<ServiceFaults>>, req: Request, next: Next) -> Response {
    if faults.rules.is_empty() {
        return next.run(req).await;
    }
    let (parts, body) = req.into_parts();
    let bytes = to_bytes(body, 1 << 22).await.unwrap_or_default();
    let behavior = faults.fire(&parts.method, &parts.uri, &bytes);
    let req = Request::from_parts(parts, Body::from(bytes));
    match behavior {
        None => next.run(req).await,
        Some(Behavior::Delay { ms }) => {
            tokio::time::sleep(Duration::from_millis(ms)).await;
            next.run(req).await
        }
        Some(b) => fault_response(faults.service, &b),
    }
}

fn fault_response(service: Service, behavior: &Behavior) -> Response {
    match behavior {
        Behavior::Status500WithStacktrace { runtime } => {
            text_500(stack_trace(*runtime, service.name()))
        }
        Behavior::ForwardExceptionThroughBff { runtime } => {
            let mut resp = text_500(stack_trace(*runtime, service.name()));
            resp.headers_mut()
                .insert(FORWARD_HEADER, HeaderValue::from_static("exception"));
            resp
        }
        Behavior::Status500Sanitized => super::json_error(StatusCode::INTERNAL_SERVER_ERROR, "internal error"),
        Behavior::Status503 => super::json_error(StatusCode::SERVICE_UNAVAILABLE, "service unavailable"),
        Behavior::Delay { .. } => unreachable!("delays are not responses"),
    }
}

fn text_500(body: String) -> Response {
    (
        StatusCode::INTERNAL_SERVER_ERROR,
        [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
        body,
    )
        .into_response()
}

/// Stack-trace text as an unhandled exception in `runtime` would print it.
pub fn stack_trace(runtime: Runtime, service: &str) -> String {
    let class = {
        let mut c = service.chars();
        c.next()
            .map(|f| f.to_ascii_uppercase().to_string() + c.as_str())
            .unwrap_or_default()
    };
    match runtime {
        Runtime::Java => format!(
            "java.lang.IllegalStateException: {service} lookup failed\n\
             \tat com.shop.{service}.{class}Repository.find({class}Repository.java:88)\n\
             \tat com.shop.{service}.{class}Service.load({class}Service.java:41)\n\
             \tat com.shop.{service}.{class}Controller.get({class}Controller.java:27)\n"
        ),
        Runtime::Python => format!(
            "Traceback (most recent call last):\n  \
             File \"/srv/{service}/app.py\", line 42, in handler\n    \
             record = store[key]\n\
             KeyError: 'id'\n"
        ),
        Runtime::Node => format!(
            "TypeError: Cannot read properties of undefined (reading 'id')\n    \
             at load{class} (/srv/{service}/routes.js:27:19)\n    \
             at Layer.handle [as handle_request] (/srv/node_modules/express/lib/router/layer.js:95:5)\n"
        ),
    }
}
