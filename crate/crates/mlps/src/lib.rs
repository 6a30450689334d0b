//! Threaded runtime, parameter server, transport and harness built on
//! `mlps-core`.

pub mod apps;
pub mod client;
pub mod error;
pub mod harness;
pub mod runtime;
pub mod server;
pub mod table;
pub mod transport;

pub use mlps_core as core;
