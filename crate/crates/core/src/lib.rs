//! Algorithmic core of the `mlps` runtime.
//!
//! Everything in this crate is pure computation over owned buffers: the
//! stale-synchronous clock gate, the model-parallel schedulers and their
//! diagnostics, the Lasso and distance-metric-learning update rules, and the
//! binary wire codec. It builds without `std` (only `alloc` is required) so the
//! same code backs the threaded runtime, the TCP transport and the test
//! oracles.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod consistency;
pub mod dml;
pub mod lasso;
pub mod protocol;
pub mod schedule;

pub use consistency::{Clock, StalenessBound, VectorClock, WorkerId};
pub use schedule::ScheduleDecision;
