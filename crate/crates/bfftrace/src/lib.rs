//! Runtime side of bfftrace: capture proxies, the sequence executor, the
//! testbed harness, the run store and the control service.

pub mod clock;
pub mod control;
pub mod executor;
pub mod harness;
pub mod proxy;
pub mod store;

pub use bfftrace_core as core;
