//! The three backends behind the harness BFF. Data is static or echoed.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bytes::Bytes;
use serde_json::{json, Value};

use super::json_error;

const CATEGORIES: [&str; 3] = ["books", "games", "tools"];

struct Product {
    id: &'static str,
    name: &'static str,
    category: &'static str,
    price: f64,
    popularity: u64,
}

const CATALOG: [Product; 5] = [
    Product {
        id: "p-1",
        name: "Rust in Action",
        category: "books",
        price: 39.5,
        popularity: 87,
    },
    Product {
        id: "p-2",
        name: "Puzzle Box",
        category: "games",
        price: 24.0,
        popularity: 54,
    },
    Product {
        id: "p-3",
        name: "Torque Wrench",
        category: "tools",
        price: 61.25,
        popularity: 12,
    },
    Product {
        id: "p-4",
        name: "Systems Design Notes",
        category: "books",
        price: 18.0,
        popularity: 73,
    },
    Product {
        id: "p-5",
        name: "Card Deck",
        category: "games",
        price: 7.5,
        popularity: 31,
    },
];

fn product_json(p: &Product) -> Value {
    json!({ "productId": p.id, "name": p.name, "category": p.category, "price": p.price })
}

fn query_pairs(q: &Option<String>) -> Vec<(String, String)> {
    q.as_deref()
        .unwrap_or("")
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            (k.to_string(), v.to_string())
        })
        .collect()
}

/// `?limit=` in 1..=100 and `?category=` from the catalog categories.
async fn list_products(RawQuery(q): RawQuery) -> Response {
    let mut limit = CATALOG.len();
    let mut category = None;
    for (k, v) in query_pairs(&q) {
        match k.as_str() {
            "limit" => match v.parse::<usize>() {
                Ok(n) if (1..=100).contains(&n) => limit = n,
                _ => return json_error(StatusCode::BAD_REQUEST, "limit must be an integer in 1..100"),
            },
            "category" if CATEGORIES.contains(&v.as_str()) => category = Some(v),
            "category" => return json_error(StatusCode::BAD_REQUEST, "unknown category"),
            _ => {}
        }
    }
    let items: Vec<Value> = CATALOG
        .iter()
        .filter(|p| category.as_deref().map_or(true, |c| c == p.category))
        .take(limit)
        .map(product_json)
        .collect();
    Json(json!({ "items": items })).into_response()
}

async fn get_product(Path(id): Path<String>) -> Response {
    match CATALOG.iter().find(|p| p.id == id) {
        Some(p) => Json(product_json(p)).into_response(),
        None => json_error(StatusCode::NOT_FOUND, "product not found"),
    }
}

pub(super) fn products() -> Router {
    Router::new()
        .route("/products", get(list_products))
        .route("/products/{productId}", get(get_product))
}

#[derive(Default)]
struct Counter(AtomicU64);

impl Counter {
    fn next(&self) -> u64 {
        100 + self.0.fetch_add(1, Ordering::SeqCst)
    }
}

fn numbered(id: &str, prefix: &str) -> bool {
    id.strip_prefix(prefix)
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

async fn popularity() -> Json<Value> {
    let map: serde_json::Map<String, Value> = CATALOG.iter().map(|p| (p.id.to_string(), json!(p.popularity))).collect();
    Json(Value::Object(map))
}

fn json_object(body: &Bytes) -> Option<serde_json::Map<String, Value>> {
    match serde_json::from_slice(body) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

async fn create_order(State(ids): State<Arc<Counter>>, body: Bytes) -> Response {
    let Some(order) = json_object(&body) else {
        return json_error(StatusCode::BAD_REQUEST, "body must be a JSON object");
    };
    let quantity = match order.get("quantity").and_then(Value::as_i64) {
        Some(q) if (1..=50).contains(&q) => q,
        _ => return json_error(StatusCode::BAD_REQUEST, "quantity must be an integer in 1..50"),
    };
    let (Some(product), Some(_)) = (
        order.get("productId").and_then(Value::as_str),
        order.get("userId").and_then(Value::as_str),
    ) else {
        return json_error(StatusCode::BAD_REQUEST, "productId and userId are required");
    };
    if let Some(note) = order.get("note") {
        if note.as_str().map_or(true, |n| n.chars().count() > 200) {
            return json_error(StatusCode::BAD_REQUEST, "note must be a string of at most 200 characters");
        }
    }
    let unit = order
        .get("unitPrice")
        .and_then(Value::as_f64)
        .or_else(|| CATALOG.iter().find(|p| p.id == product).map(|p| p.price))
        .unwrap_or(0.0);
    (
        StatusCode::CREATED,
        Json(json!({
            "orderId": format!("o-{}", ids.next()),
            "status": "pending",
            "total": unit * quantity as f64,
        })),
    )
        .into_response()
}

async fn get_order(Path(id): Path<String>) -> Response {
    if !numbered(&id, "o-") {
        return json_error(StatusCode::NOT_FOUND, "order not found");
    }
    Json(json!({
        "orderId": id,
        "status": "confirmed",
        "productId": "p-1",
        "userId": "u-1",
        "quantity": 1,
    }))
    .into_response()
}

pub(super) fn orders() -> Router {
    Router::new()
        .route("/popularity", get(popularity))
        .route("/orders", post(create_order))
        .route("/orders/{orderId}", get(get_order))
        .with_state(Arc::new(Counter::default()))
}

async fn get_user(Path(id): Path<String>) -> Response {
    if !numbered(&id, "u-") {
        return json_error(StatusCode::NOT_FOUND, "user not found");
    }
    Json(json!({ "userId": id, "name": format!("user {id}"), "email": format!("{id}@example.test") })).into_response()
}

async fn create_user(State(ids): State<Arc<Counter>>, body: Bytes) -> Response {
    let Some(user) = json_object(&body) else {
        return json_error(StatusCode::BAD_REQUEST, "body must be a JSON object");
    };
    let name = match user.get("name").and_then(Value::as_str) {
        Some(n) if (1..=64).contains(&n.chars().count()) => n,
        _ => return json_error(StatusCode::BAD_REQUEST, "name must be 1..64 characters"),
    };
    let email = match user.get("email").and_then(Value::as_str) {
        Some(e) if e.contains('@') => e,
        _ => return json_error(StatusCode::BAD_REQUEST, "email is invalid"),
    };
    (
        StatusCode::CREATED,
        Json(json!({ "userId": format!("u-{}", ids.next()), "name": name, "email": email })),
    )
        .into_response()
}

pub(super) fn users() -> Router {
    Router::new()
        .route("/users", post(create_user))
        .route("/users/{userId}", get(get_user))
        .with_state(Arc::new(Counter::default()))
}
