//! One parameter-server shard: stores the rows it owns, tracks every
//! participant's committed clock, and gates reads on the staleness bound.
//!
//! Ops arrive into a per-writer staging buffer and become pending on commit.
//! Clock `t` is merged into the stored rows once every participant has
//! committed it, so the stored state always equals the initial tables plus
//! every clock below the frontier (the minimum committed clock).

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use mlps_core::consistency::{observed_staleness, permitted_at_frontier};
use mlps_core::{Clock, StalenessBound, VectorClock, WorkerId};

use crate::error::PsError;
use crate::table::{Cell, CellOp, Schema, TableData, WriteBuffer};

/// Result of a gated read.
#[derive(Debug, Clone, PartialEq)]
pub struct RowRead {
    pub values: Vec<f64>,
    /// The reader's committed clock when the read was served.
    pub reader_clock: Clock,
    /// Clocks below this are fully merged into `values`.
    pub frontier: Clock,
}

impl RowRead {
    pub fn staleness(&self) -> u64 {
        observed_staleness(self.reader_clock, self.frontier)
    }
}

/// Rows owned by one shard at one frontier.
#[derive(Debug, Clone)]
pub struct ShardSnapshot {
    pub shard: usize,
    pub frontier: Clock,
    /// Per table, `(row, values)` for the rows this shard owns.
    pub tables: Vec<(String, usize, Vec<(u64, Vec<f64>)>)>,
}

pub type FrontierHook = Box<dyn Fn(ShardSnapshot) + Send>;

struct State {
    rows: Vec<BTreeMap<u64, Vec<f64>>>,
    clock: VectorClock,
    staging: Vec<WriteBuffer>,
    pending: BTreeMap<Clock, BTreeMap<WorkerId, WriteBuffer>>,
    frontier: Clock,
    shutdown: bool,
    conflicts: Vec<PsError>,
    hook: Option<FrontierHook>,
}

pub struct ParamServer {
    shard: usize,
    schema: Arc<Schema>,
    staleness: StalenessBound,
    state: Mutex<State>,
    cond: Condvar,
}

impl ParamServer {
    pub fn new(
        shard: usize,
        schema: Arc<Schema>,
        participants: usize,
        staleness: StalenessBound,
    ) -> Self {
        let rows = schema
            .tables()
            .iter()
            .map(|spec| {
                (0..spec.rows)
                    .filter(|r| schema.shard_of(*r) == shard)
                    .map(|r| (r, spec.initial_row(r)))
                    .collect()
            })
            .collect();
        Self {
            shard,
            schema,
            staleness,
            state: Mutex::new(State {
                rows,
                clock: VectorClock::new(participants),
                staging: vec![WriteBuffer::new(); participants],
                pending: BTreeMap::new(),
                frontier: 0,
                shutdown: false,
                conflicts: Vec::new(),
                hook: None,
            }),
            cond: Condvar::new(),
        }
    }

    pub fn shard(&self) -> usize {
        self.shard
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn staleness(&self) -> StalenessBound {
        self.staleness
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn check_worker(state: &State, worker: WorkerId) -> Result<Clock, PsError> {
        state
            .clock
            .get(worker)
            .map_err(|_| PsError::UnknownWorker(worker))
    }

    fn check_row(&self, table: usize, row: u64) -> Result<(), PsError> {
        self.schema.check_row(table, row)?;
        if self.schema.shard_of(row) != self.shard {
            return Err(PsError::WrongShard {
                row,
                shard: self.shard,
            });
        }
        Ok(())
    }

    /// Blocks until the reader's staleness bound is met, then returns the
    /// merged row plus the reader's own committed but unmerged writes.
    pub fn get(&self, table: &str, row: u64, reader: WorkerId) -> Result<RowRead, PsError> {
        self.get_inner(table, row, reader, None)?
            .ok_or(PsError::Interrupted)
    }

    /// Like [`get`](Self::get) but gives up after `timeout`, returning `None`
    /// if the gate is still closed.
    pub fn get_timeout(
        &self,
        table: &str,
        row: u64,
        reader: WorkerId,
        timeout: Duration,
    ) -> Result<Option<RowRead>, PsError> {
        self.get_inner(table, row, reader, Some(timeout))
    }

    /// Non-blocking probe: `None` when the read would block.
    pub fn try_get(&self, table: &str, row: u64, reader: WorkerId) -> Result<Option<RowRead>, PsError> {
        self.get_inner(table, row, reader, Some(Duration::ZERO))
    }

    fn get_inner(
        &self,
        table: &str,
        row: u64,
        reader: WorkerId,
        timeout: Option<Duration>,
    ) -> Result<Option<RowRead>, PsError> {
        let t = self.schema.table(table)?;
        self.check_row(t, row)?;
        let deadline = timeout.map(|d| Instant::now() + d);
        let mut state = self.lock();
        Self::check_worker(&state, reader)?;
        loop {
            if state.shutdown {
                return Err(PsError::Interrupted);
            }
            let reader_clock = state.clock.entries()[reader as usize];
            if permitted_at_frontier(reader_clock, self.staleness, state.frontier) {
                let mut values = state.rows[t][&row].clone();
                for per_worker in state.pending.values() {
                    if let Some(own) = per_worker.get(&reader) {
                        own.apply_row(t, row, &mut values);
                    }
                }
                return Ok(Some(RowRead {
                    values,
                    reader_clock,
                    frontier: state.frontier,
                }));
            }
            state = match deadline {
                None => self.cond.wait(state).unwrap_or_else(|e| e.into_inner()),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Ok(None);
                    }
                    self.cond
                        .wait_timeout(state, deadline - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0
                }
            };
        }
    }

    /// Stages writes for `worker`'s current clock.
    pub fn stage(
        &self,
        worker: WorkerId,
        clock: Clock,
        ops: impl IntoIterator<Item = (Cell, CellOp)>,
    ) -> Result<(), PsError> {
        let mut state = self.lock();
        let current = Self::check_worker(&state, worker)?;
        if current != clock {
            return Err(PsError::ClockMismatch {
                worker,
                expected: current,
                got: clock,
            });
        }
        let mut accepted = Vec::new();
        for (cell, op) in ops {
            let spec = self.schema.spec(cell.0);
            self.check_row(cell.0, cell.1)?;
            if cell.2 as usize >= spec.width {
                return Err(PsError::UnknownColumn {
                    table: spec.name.clone(),
                    col: cell.2,
                });
            }
            accepted.push((cell, op));
        }
        let staging = &mut state.staging[worker as usize];
        for (cell, op) in accepted {
            staging.insert(cell, op);
        }
        Ok(())
    }

    /// Publishes `worker`'s staged writes at its current clock and ticks it.
    /// Returns the worker's new clock. A put colliding with another writer's
    /// put to the same cell and clock is dropped and reported; the tick still
    /// happens.
    pub fn commit(&self, worker: WorkerId, clock: Clock) -> Result<Clock, PsError> {
        let mut state = self.lock();
        let current = Self::check_worker(&state, worker)?;
        if current != clock {
            return Err(PsError::ClockMismatch {
                worker,
                expected: current,
                got: clock,
            });
        }
        let mut buffer = state.staging[worker as usize].take();
        let mut conflict = None;
        if let Some(others) = state.pending.get(&clock) {
            let clashes: Vec<Cell> = buffer
                .iter()
                .filter(|(cell, op)| {
                    matches!(op, CellOp::Overwrite(_))
                        && others
                            .values()
                            .any(|b| matches!(b.get(cell), Some(CellOp::Overwrite(_))))
                })
                .map(|(cell, _)| *cell)
                .collect();
            for cell in clashes {
                buffer.remove(&cell);
                let err = PsError::PutConflict {
                    table: self.schema.spec(cell.0).name.clone(),
                    row: cell.1,
                    col: cell.2,
                    clock,
                };
                conflict.get_or_insert_with(|| err.clone());
                state.conflicts.push(err);
            }
        }
        state.pending.entry(clock).or_default().insert(worker, buffer);
        let next = state
            .clock
            .tick(worker)
            .map_err(|_| PsError::UnknownWorker(worker))?;
        self.advance(&mut state);
        drop(state);
        self.cond.notify_all();
        match conflict {
            Some(err) => Err(err),
            None => Ok(next),
        }
    }

    fn advance(&self, state: &mut State) {
        let min = state.clock.min_clock().unwrap_or(0);
        while state.frontier < min {
            let t = state.frontier;
            let writers = state.pending.remove(&t).unwrap_or_default();
            let overwritten: BTreeMap<Cell, WorkerId> = writers
                .iter()
                .flat_map(|(w, b)| {
                    b.iter()
                        .filter(|(_, op)| matches!(op, CellOp::Overwrite(_)))
                        .map(move |(cell, _)| (*cell, *w))
                })
                .collect();
            // Deltas for a cell are summed in worker order before touching
            // the base value.
            let mut merged: BTreeMap<Cell, CellOp> = BTreeMap::new();
            for buffer in writers.values() {
                for (cell, op) in buffer.iter() {
                    match (op, merged.get_mut(cell)) {
                        (CellOp::Delta(_), _) if overwritten.contains_key(cell) => {}
                        (CellOp::Delta(d), Some(CellOp::Delta(sum))) => *sum += d,
                        (op, _) => {
                            merged.insert(*cell, *op);
                        }
                    }
                }
            }
            for (cell, op) in merged {
                let slot = &mut state.rows[cell.0]
                    .get_mut(&cell.1)
                    .expect("validated at staging")[cell.2 as usize];
                *slot = op.apply(*slot);
            }
            state.frontier += 1;
            if let Some(hook) = &state.hook {
                hook(Self::snapshot_of(self.shard, &self.schema, state));
            }
        }
    }

    fn snapshot_of(shard: usize, schema: &Schema, state: &State) -> ShardSnapshot {
        ShardSnapshot {
            shard,
            frontier: state.frontier,
            tables: schema
                .tables()
                .iter()
                .zip(&state.rows)
                .map(|(spec, rows)| {
                    (
                        spec.name.clone(),
                        spec.width,
                        rows.iter().map(|(r, v)| (*r, v.clone())).collect(),
                    )
                })
                .collect(),
        }
    }

    /// Merged contents at the current frontier.
    pub fn snapshot(&self) -> ShardSnapshot {
        let state = self.lock();
        Self::snapshot_of(self.shard, &self.schema, &state)
    }

    /// Installs a callback invoked with a snapshot each time the frontier
    /// advances. The current state is reported immediately.
    pub fn set_hook(&self, hook: FrontierHook) {
        let mut state = self.lock();
        hook(Self::snapshot_of(self.shard, &self.schema, &state));
        state.hook = Some(hook);
    }

    pub fn clear_hook(&self) {
        self.lock().hook = None;
    }

    pub fn vector_clock(&self) -> VectorClock {
        self.lock().clock.clone()
    }

    pub fn frontier(&self) -> Clock {
        self.lock().frontier
    }

    pub fn conflicts(&self) -> Vec<PsError> {
        self.lock().conflicts.clone()
    }

    /// Wakes every blocked reader with [`PsError::Interrupted`] and refuses
    /// further reads.
    pub fn shutdown(&self) {
        self.lock().shutdown = true;
        self.cond.notify_all();
    }

    pub fn is_shut_down(&self) -> bool {
        self.lock().shutdown
    }
}

/// Joins per-shard snapshots taken at the same frontier into full tables.
pub fn assemble(schema: &Schema, parts: &[ShardSnapshot]) -> crate::table::ModelSnapshot {
    let mut out = crate::table::ModelSnapshot::default();
    for spec in schema.tables() {
        out.tables.insert(
            spec.name.clone(),
            TableData {
                width: spec.width,
                rows: vec![Vec::new(); spec.rows as usize],
            },
        );
    }
    for part in parts {
        for (name, _, rows) in &part.tables {
            let data = out.tables.get_mut(name).expect("schema table");
            for (r, v) in rows {
                data.rows[*r as usize] = v.clone();
            }
        }
    }
    out
}
