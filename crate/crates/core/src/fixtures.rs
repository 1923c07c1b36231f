//! Sample inputs shipped with the crate: the testbed OpenAPI document and a
//! small Zeek `http.log` capture of a BFF at `10.0.0.2:8000`.

pub const HARNESS_OPENAPI: &str = include_str!("../fixtures/harness-openapi.json");

pub const ZEEK_HTTP_LOG: &str = include_str!("../fixtures/bff-http.log");

/// BFF endpoint the Zeek sample was captured against.
pub const ZEEK_HTTP_BFF: &str = "10.0.0.2:8000";
