//! A BFF with three backends and scriptable faults, for tests and demos.
//!
//! The BFF labels every incoming request and passes the label to the
//! backends in [`ORACLE_HEADER`]; [`HarnessHandle::oracle_trace_map`] turns
//! those labels into the true main/sub assignment. Nothing in the analysis
//! path reads the header.

mod backends;
mod bff;
mod faults;
mod oracle;

use std::net::{Ipv4Addr, SocketAddr};
use std::sync::{Arc, RwLock};

use axum::http::{Method, StatusCode};
use axum::middleware::from_fn_with_state;
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use bfftrace_core::Endpoint;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub use faults::{stack_trace, Behavior, FaultRule, FaultSchedule, Runtime, ScheduleError, Trigger};
pub use oracle::{MainId, OracleMain, OracleMap, OracleSub};

pub const ORACLE_HEADER: &str = "x-trace-oracle";
/// Set by a backend fault that the BFF relays verbatim.
pub const FORWARD_HEADER: &str = "x-harness-forward";

/// Schedule shipped with the crate: one fault of each kind.
pub const DEFAULT_SCHEDULE: &str = include_str!("../../fixtures/default-faults.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Service {
    Bff,
    Products,
    Orders,
    Users,
}

impl Service {
    pub const ALL: [Service; 4] = [Service::Bff, Service::Products, Service::Orders, Service::Users];
    pub const BACKENDS: [Service; 3] = [Service::Products, Service::Orders, Service::Users];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Service::Bff => "bff",
            Service::Products => "products",
            Service::Orders => "orders",
            Service::Users => "users",
        }
    }

    /// Routes served, as `(method, template)`.
    pub fn endpoints(self) -> Vec<(Method, &'static str)> {
        match self {
            Service::Bff => vec![
                (Method::GET, "/openapi.json"),
                (Method::GET, "/products"),
                (Method::GET, "/products/{productId}"),
                (Method::POST, "/orders"),
                (Method::GET, "/orders/{orderId}"),
                (Method::POST, "/users"),
                (Method::GET, "/users/{userId}"),
            ],
            Service::Products => vec![(Method::GET, "/products"), (Method::GET, "/products/{productId}")],
            Service::Orders => vec![
                (Method::GET, "/popularity"),
                (Method::POST, "/orders"),
                (Method::GET, "/orders/{orderId}"),
            ],
            Service::Users => vec![(Method::GET, "/users/{userId}"), (Method::POST, "/users")],
        }
    }
}

pub(crate) fn json_error(status: StatusCode, message: &str) -> Response {
    (status, Json(serde_json::json!({ "error": message }))).into_response()
}

/// Loopback ports; 0 picks a free one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HarnessPorts {
    pub bff: u16,
    pub products: u16,
    pub orders: u16,
    pub users: u16,
}

impl HarnessPorts {
    /// BFF on `base`, then products, orders and users on the next three.
    pub fn from_base(base: u16) -> Self {
        if base == 0 {
            return Self::default();
        }
        Self {
            bff: base,
            products: base.saturating_add(1),
            orders: base.saturating_add(2),
            users: base.saturating_add(3),
        }
    }

    fn port(&self, s: Service) -> u16 {
        match s {
            Service::Bff => self.bff,
            Service::Products => self.products,
            Service::Orders => self.orders,
            Service::Users => self.users,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{service:?} cannot listen on {addr}: {source}")]
    BindFailed {
        service: Service,
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

pub struct HarnessHandle {
    addrs: [SocketAddr; 4],
    upstreams: Arc<RwLock<[SocketAddr; 4]>>,
    oracle: Arc<oracle::Oracle>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl HarnessHandle {
    pub fn addr(&self, s: Service) -> SocketAddr {
        self.addrs[s.index()]
    }

    pub fn endpoint(&self, s: Service) -> Endpoint {
        self.addr(s).into()
    }

    /// Makes the BFF reach `backend` at `addr`, e.g. a capture proxy.
    pub fn set_upstream(&self, backend: Service, addr: SocketAddr) {
        assert_ne!(backend, Service::Bff, "the BFF has no upstream");
        self.upstreams.write().unwrap_or_else(|e| e.into_inner())[backend.index()] = addr;
    }

    pub fn oracle_trace_map(&self) -> OracleMap {
        self.oracle.snapshot()
    }

    /// Which backend listens on `ep`.
    pub fn backend_at(&self, ep: &Endpoint) -> Option<Service> {
        Service::BACKENDS
            .into_iter()
            .find(|s| Endpoint::from(self.addr(*s)) == *ep)
    }

    pub async fn stop(self) {
        let _ = self.shutdown.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

pub async fn start_harness(schedule: &FaultSchedule, ports: HarnessPorts) -> Result<HarnessHandle, HarnessError> {
    let faults = schedule.compile()?;
    let mut listeners = Vec::with_capacity(4);
    let mut addrs = [SocketAddr::from((Ipv4Addr::LOCALHOST, 0)); 4];
    for s in Service::ALL {
        let want = SocketAddr::from((Ipv4Addr::LOCALHOST, ports.port(s)));
        let listener = TcpListener::bind(want).await.map_err(|source| HarnessError::BindFailed {
            service: s,
            addr: want,
            source,
        })?;
        addrs[s.index()] = listener.local_addr().map_err(|source| HarnessError::BindFailed {
            service: s,
            addr: want,
            source,
        })?;
        listeners.push(listener);
    }

    let oracle = Arc::new(oracle::Oracle::default());
    let upstreams = Arc::new(RwLock::new(addrs));
    let (shutdown, rx) = watch::channel(false);

    let mut tasks = Vec::with_capacity(4);
    for (s, listener) in Service::ALL.into_iter().zip(listeners) {
        let app: Router = match s {
            Service::Bff => bff::router(Arc::new(bff::BffState {
                client: bff::BffState::client(),
                upstreams: upstreams.clone(),
            }))
            .layer(from_fn_with_state(faults[s.index()].clone(), faults::inject))
            .layer(from_fn_with_state(oracle.clone(), oracle::label_main)),
            backend => {
                let routes = match backend {
                    Service::Products => backends::products(),
                    Service::Orders => backends::orders(),
                    _ => backends::users(),
                };
                routes
                    .layer(from_fn_with_state(faults[s.index()].clone(), faults::inject))
                    .layer(from_fn_with_state((backend, oracle.clone()), oracle::observe_sub))
            }
        };
        let mut stop = rx.clone();
        tasks.push(tokio::spawn(async move {
            let serve = axum::serve(listener, app).with_graceful_shutdown(async move {
                let _ = stop.wait_for(|s| *s).await;
            });
            if let Err(e) = serve.await {
                tracing::warn!("harness {} stopped: {e}", s.name());
            }
        }));
    }

    Ok(HarnessHandle {
        addrs,
        upstreams,
        oracle,
        shutdown,
        tasks,
    })
}
