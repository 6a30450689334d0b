//! Vector clocks and the bounded-staleness read gate.
//!
//! A worker's entry counts the clocks it has committed, which is also the
//! clock it is currently working on. Updates produced while at clock `t` carry
//! timestamp `t` and become visible to others when the worker ticks past `t`.
//! A reader at clock `c` with staleness bound `s` must observe every update
//! with timestamp `<= c - s - 1`, which holds exactly when every worker has
//! ticked past `c - s - 1`, i.e. `min_clock >= c - s`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Small non-negative worker identifier.
pub type WorkerId = u32;

/// Iteration counter.
pub type Clock = u64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClockError {
    #[error("vector clock has no registered workers")]
    Empty,
    #[error("worker {0} is not registered")]
    UnknownWorker(WorkerId),
}

/// Maximum number of clocks a reader may run ahead of the slowest committed
/// worker. Zero is bulk-synchronous execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct StalenessBound(pub u64);

impl StalenessBound {
    pub const BULK_SYNCHRONOUS: StalenessBound = StalenessBound(0);

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for StalenessBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s={}", self.0)
    }
}

/// Per-worker committed clock counts. Workers are registered at construction
/// and are indexed `0..len`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VectorClock {
    entries: Vec<Clock>,
}

impl VectorClock {
    /// Registers `workers` workers, all at clock 0.
    pub fn new(workers: usize) -> Self {
        Self {
            entries: vec![0; workers],
        }
    }

    pub fn from_entries(entries: Vec<Clock>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Clock] {
        &self.entries
    }

    pub fn get(&self, worker: WorkerId) -> Result<Clock, ClockError> {
        self.entries
            .get(worker as usize)
            .copied()
            .ok_or(ClockError::UnknownWorker(worker))
    }

    pub fn min_clock(&self) -> Result<Clock, ClockError> {
        self.entries.iter().copied().min().ok_or(ClockError::Empty)
    }

    /// Advances `worker` by one clock in place and returns its new value.
    pub fn tick(&mut self, worker: WorkerId) -> Result<Clock, ClockError> {
        let slot = self
            .entries
            .get_mut(worker as usize)
            .ok_or(ClockError::UnknownWorker(worker))?;
        *slot += 1;
        Ok(*slot)
    }

    /// Returns a copy of this clock with `worker` advanced by one.
    pub fn ticked(&self, worker: WorkerId) -> Result<Self, ClockError> {
        let mut next = self.clone();
        next.tick(worker)?;
        Ok(next)
    }
}

pub fn min_clock(vc: &VectorClock) -> Result<Clock, ClockError> {
    vc.min_clock()
}

pub fn tick(vc: &VectorClock, worker: WorkerId) -> Result<VectorClock, ClockError> {
    vc.ticked(worker)
}

/// The minimum committed frontier a reader at `reader_clock` needs before its
/// read may proceed.
pub fn required_frontier(reader_clock: Clock, s: StalenessBound) -> Clock {
    reader_clock.saturating_sub(s.0)
}

/// Newest timestamp whose updates a reader at `reader_clock` is guaranteed to
/// see, or `None` when the guarantee is vacuous (`c - s - 1 < 0`).
pub fn guaranteed_through(reader_clock: Clock, s: StalenessBound) -> Option<Clock> {
    reader_clock.checked_sub(s.0)?.checked_sub(1)
}

/// Gate check against a frontier value (the minimum committed clock).
pub fn permitted_at_frontier(reader_clock: Clock, s: StalenessBound, frontier: Clock) -> bool {
    frontier >= required_frontier(reader_clock, s)
}

/// True iff every update timestamped `<= reader_clock - s - 1` has been
/// committed by every worker in `vc`. An empty clock has no pending writers.
pub fn ssp_read_permitted(reader_clock: Clock, s: StalenessBound, vc: &VectorClock) -> bool {
    match vc.min_clock() {
        Ok(frontier) => permitted_at_frontier(reader_clock, s, frontier),
        Err(_) => true,
    }
}

/// Clocks between the reader and the committed frontier it observed.
pub fn observed_staleness(reader_clock: Clock, frontier: Clock) -> u64 {
    reader_clock.saturating_sub(frontier)
}
