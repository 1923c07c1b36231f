//! Core model and analysis for fuzzing a backend-for-frontend (BFF) service
//! and attributing the traffic it fans out to its backends.
//!
//! Everything here is pure: no sockets, clocks or filesystem access beyond
//! the explicit ingest helpers. The runtime pieces live in the `bfftrace`
//! crate.

pub mod api_model;
mod canonical;
pub mod capture;
pub mod classify;
pub mod correlate;
mod endpoint;
pub mod fixtures;
pub mod fuzz;
pub mod report;
pub mod run;

pub use canonical::canonical_json;
pub use endpoint::{Endpoint, EndpointParseError};
