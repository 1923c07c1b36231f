//! The harness BFF and its fan-out.
//!
//! | operation      | sub-requests, in order                                   |
//! |----------------|----------------------------------------------------------|
//! | `listProducts` | products `GET /products`, orders `GET /popularity` (optional) |
//! | `getProduct`   | products `GET /products/{id}`                            |
//! | `createOrder`  | users `GET /users/{userId}`, products `GET /products/{productId}`, orders `POST /orders` |
//! | `getOrder`     | orders `GET /orders/{id}`, users `GET /users/{userId}`   |
//! | `getUser`      | users `GET /users/{id}`                                  |
//! | `createUser`   | users `POST /users`                                      |
//!
//! A request body that is not JSON is rejected with 400 before any
//! sub-request, and the chain stops at the first failing required call.
//! Backend 4xx responses are passed through; backend 5xx responses become a
//! sanitized 500 unless the backend asked for its body to be forwarded.

use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{RawQuery, State};
use axum::http::{header, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Extension, Json, Router};
use bytes::Bytes;
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde_json::{json, Map, Value};

use super::oracle::MainId;
use super::{json_error, Service, FORWARD_HEADER, ORACLE_HEADER};

pub(super) struct BffState {
    pub client: reqwest::Client,
    /// Where each backend is reached, indexed by [`Service::index`].
    pub upstreams: Arc<RwLock<[std::net::SocketAddr; 4]>>,
}

struct Reply {
    status: StatusCode,
    content_type: Option<HeaderValue>,
    body: Bytes,
    forward: bool,
}

impl Reply {
    fn verbatim(self, status: StatusCode) -> Response {
        let mut resp = (status, self.body).into_response();
        if let Some(ct) = self.content_type {
            resp.headers_mut().insert(header::CONTENT_TYPE, ct);
        }
        resp
    }
}

/// Unreserved characters stay as they are.
const SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

fn segment(value: &str) -> String {
    utf8_percent_encode(value, SEGMENT).to_string()
}

fn last_segment(uri: &Uri) -> &str {
    uri.path().rsplit('/').next().unwrap_or("")
}

impl BffState {
    pub fn client() -> reqwest::Client {
        reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .no_proxy()
            .tcp_nodelay(true)
            .build()
            .expect("a plain HTTP client builds")
    }

    async fn call(
        &self,
        main: &MainId,
        service: Service,
        method: Method,
        path_and_query: &str,
        body: Option<&Value>,
    ) -> Result<Reply, Response> {
        let addr = self.upstreams.read().unwrap_or_else(|e| e.into_inner())[service.index()];
        let mut req = self
            .client
            .request(method, format!("http://{addr}{path_and_query}"))
            .header(ORACLE_HEADER, main.0.as_str());
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req
            .send()
            .await
            .map_err(|_| json_error(StatusCode::BAD_GATEWAY, "backend unavailable"))?;
        let status = resp.status();
        let content_type = resp.headers().get(header::CONTENT_TYPE).cloned();
        let forward = resp.headers().contains_key(FORWARD_HEADER);
        let body = resp
            .bytes()
            .await
            .map_err(|_| json_error(StatusCode::BAD_GATEWAY, "backend unavailable"))?;
        Ok(Reply {
            status,
            content_type,
            body,
            forward,
        })
    }

    /// A call whose failure ends the request.
    async fn required(
        &self,
        main: &MainId,
        service: Service,
        method: Method,
        path_and_query: &str,
        body: Option<&Value>,
    ) -> Result<(StatusCode, Value), Response> {
        let reply = self.call(main, service, method, path_and_query, body).await?;
        if reply.forward {
            return Err(reply.verbatim(StatusCode::INTERNAL_SERVER_ERROR));
        }
        if reply.status.is_server_error() {
            return Err(json_error(StatusCode::INTERNAL_SERVER_ERROR, "internal error"));
        }
        if !reply.status.is_success() {
            let status = reply.status;
            return Err(reply.verbatim(status));
        }
        serde_json::from_slice(&reply.body)
            .map(|v| (reply.status, v))
            .map_err(|_| json_error(StatusCode::BAD_GATEWAY, "backend sent an unreadable payload"))
    }
}

type St = State<Arc<BffState>>;
type Main = Extension<MainId>;

fn respond(result: Result<(StatusCode, Value), Response>) -> Response {
    match result {
        Ok((status, v)) => (status, Json(v)).into_response(),
        Err(resp) => resp,
    }
}

fn parse_body(body: &Bytes) -> Result<Value, Response> {
    serde_json::from_slice(body).map_err(|_| json_error(StatusCode::BAD_REQUEST, "request body is not valid JSON"))
}

async fn list_products(State(st): St, Extension(main): Main, RawQuery(q): RawQuery) -> Response {
    let path = match q {
        Some(q) if !q.is_empty() => format!("/products?{q}"),
        _ => "/products".to_string(),
    };
    let (_, listing) = match st.required(&main, Service::Products, Method::GET, &path, None).await {
        Ok(v) => v,
        Err(resp) => return resp,
    };
    // popularity is decoration; the listing works without it
    let popularity: Map<String, Value> = match st.call(&main, Service::Orders, Method::GET, "/popularity", None).await {
        Ok(r) if r.status.is_success() => serde_json::from_slice(&r.body).unwrap_or_default(),
        _ => Map::new(),
    };
    let items: Vec<Value> = listing
        .get("items")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .map(|p| {
                    let id = p.get("productId").and_then(Value::as_str).unwrap_or("");
                    json!({
                        "productId": id,
                        "name": p.get("name").cloned().unwrap_or(Value::Null),
                        "price": p.get("price").cloned().unwrap_or(Value::Null),
                        "popularity": popularity.get(id).cloned().unwrap_or(json!(0)),
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    Json(json!({ "total": items.len(), "items": items })).into_response()
}

async fn get_product(State(st): St, Extension(main): Main, uri: Uri) -> Response {
    let path = format!("/products/{}", last_segment(&uri));
    respond(st.required(&main, Service::Products, Method::GET, &path, None).await)
}

async fn create_order(State(st): St, Extension(main): Main, body: Bytes) -> Response {
    let order = match parse_body(&body) {
        Ok(v) => v,
        Err(resp) => return resp,
    };
    let (Some(user_id), Some(product_id)) = (
        order.get("userId").and_then(Value::as_str),
        order.get("productId").and_then(Value::as_str),
    ) else {
        return json_error(StatusCode::BAD_REQUEST, "userId and productId must be strings");
    };
    let users_path = format!("/users/{}", segment(user_id));
    if let Err(resp) = st.required(&main, Service::Users, Method::GET, &users_path, None).await {
        return resp;
    }
    let products_path = format!("/products/{}", segment(product_id));
    let product = match st.required(&main, Service::Products, Method::GET, &products_path, None).await {
        Ok((_, p)) => p,
        Err(resp) => return resp,
    };
    let mut forwarded = json!({
        "productId": product_id,
        "userId": user_id,
        "quantity": order.get("quantity").cloned().unwrap_or(Value::Null),
        "unitPrice": product.get("price").cloned().unwrap_or(Value::Null),
    });
    if let Some(note) = order.get("note") {
        forwarded["note"] = note.clone();
    }
    respond(
        st.required(&main, Service::Orders, Method::POST, "/orders", Some(&forwarded))
            .await,
    )
}

async fn get_order(State(st): St, Extension(main): Main, uri: Uri) -> Response {
    let path = format!("/orders/{}", last_segment(&uri));
    let (status, mut order) = match st.required(&main, Service::Orders, Method::GET, &path, None).await {
        Ok(v) => v,
        Err(resp) => return resp,
    };
    if let Some(user_id) = order.get("userId").and_then(Value::as_str) {
        let users_path = format!("/users/{}", segment(user_id));
        match st.required(&main, Service::Users, Method::GET, &users_path, None).await {
            Ok((_, user)) => order["customer"] = user.get("name").cloned().unwrap_or(Value::Null),
            Err(resp) => return resp,
        }
    }
    (status, Json(order)).into_response()
}

async fn get_user(State(st): St, Extension(main): Main, uri: Uri) -> Response {
    let path = format!("/users/{}", last_segment(&uri));
    respond(st.required(&main, Service::Users, Method::GET, &path, None).await)
}

async fn create_user(State(st): St, Extension(main): Main, body: Bytes) -> Response {
    let user = match parse_body(&body) {
        Ok(v) => v,
        Err(resp) => return resp,
    };
    respond(st.required(&main, Service::Users, Method::POST, "/users", Some(&user)).await)
}

async fn openapi() -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        bfftrace_core::fixtures::HARNESS_OPENAPI,
    )
        .into_response()
}

pub(super) fn router(state: Arc<BffState>) -> Router {
    Router::new()
        .route("/openapi.json", get(openapi))
        .route("/products", get(list_products))
        .route("/products/{productId}", get(get_product))
        .route("/orders", axum::routing::post(create_order))
        .route("/orders/{orderId}", get(get_order))
        .route("/users", axum::routing::post(create_user))
        .route("/users/{userId}", get(get_user))
        .with_state(state)
}
