//! Worker-side access to the parameter server: writes are buffered locally
//! and published on commit; reads are served by the owning shard and then
//! overlaid with the caller's uncommitted writes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use mlps_core::protocol::{IncEntry, Message, Role, Status};
use mlps_core::{Clock, WorkerId};

use crate::error::PsError;
use crate::server::{ParamServer, RowRead};
use crate::table::{Cell, CellOp, Schema, WriteBuffer};
use crate::transport::{hello, Link};

/// Which cells a client may overwrite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PutRights {
    Any,
    Denied,
    Cells(BTreeSet<Cell>),
}

/// Additive updates produced by one worker at one clock.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBatch {
    pub table: String,
    pub entries: Vec<(u64, u32, f64)>,
    pub producer: WorkerId,
    pub timestamp: Clock,
}

/// Running count, sum and sum of squares.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let m = self.mean();
        (self.sum_sq / self.count as f64 - m * m).max(0.0)
    }
}

/// Per-read observed staleness, bucketed by the reader's clock.
#[derive(Debug, Default)]
pub struct StalenessLog {
    by_clock: Mutex<BTreeMap<Clock, Moments>>,
}

impl StalenessLog {
    pub fn record(&self, reader_clock: Clock, staleness: u64) {
        self.by_clock
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(reader_clock)
            .or_default()
            .push(staleness as f64);
    }

    pub fn at(&self, clock: Clock) -> Moments {
        self.by_clock
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&clock)
            .copied()
            .unwrap_or_default()
    }

    pub fn total(&self) -> Moments {
        let mut out = Moments::default();
        for m in self.by_clock.lock().unwrap_or_else(|e| e.into_inner()).values() {
            out.merge(m);
        }
        out
    }
}

pub trait PsClient: Send {
    fn worker(&self) -> WorkerId;
    /// Number of clocks this client has committed.
    fn clock(&self) -> Clock;
    fn schema(&self) -> &Schema;
    fn get(&mut self, table: &str, row: u64) -> Result<Vec<f64>, PsError>;
    fn inc(&mut self, table: &str, entries: &[(u64, u32, f64)]) -> Result<(), PsError>;
    fn put(&mut self, table: &str, row: u64, col: u32, value: f64) -> Result<(), PsError>;
    fn commit(&mut self) -> Result<Clock, PsError>;
    fn set_rights(&mut self, rights: PutRights);

    /// Releases the connection; further calls may fail.
    fn close(&mut self) -> Result<(), PsError> {
        Ok(())
    }

    fn inc_batch(&mut self, batch: &UpdateBatch) -> Result<(), PsError> {
        if batch.producer != self.worker() {
            return Err(PsError::UnknownWorker(batch.producer));
        }
        if batch.timestamp != self.clock() {
            return Err(PsError::ClockMismatch {
                worker: batch.producer,
                expected: self.clock(),
                got: batch.timestamp,
            });
        }
        self.inc(&batch.table, &batch.entries)
    }

    /// Reads every row of a table, concatenated.
    fn get_table(&mut self, table: &str) -> Result<Vec<f64>, PsError> {
        let t = self.schema().table(table)?;
        let rows = self.schema().spec(t).rows;
        let mut out = Vec::new();
        for r in 0..rows {
            out.extend(self.get(table, r)?);
        }
        Ok(out)
    }
}

struct ClientCore {
    worker: WorkerId,
    clock: Clock,
    schema: Arc<Schema>,
    buffer: WriteBuffer,
    rights: PutRights,
    log: Option<Arc<StalenessLog>>,
}

impl ClientCore {
    fn new(worker: WorkerId, schema: Arc<Schema>, log: Option<Arc<StalenessLog>>) -> Self {
        Self {
            worker,
            clock: 0,
            schema,
            buffer: WriteBuffer::new(),
            rights: PutRights::Denied,
            log,
        }
    }

    fn finish_read(&self, table: usize, row: u64, read: RowRead) -> Vec<f64> {
        if let Some(log) = &self.log {
            log.record(read.reader_clock, read.staleness());
        }
        let mut values = read.values;
        self.buffer.apply_row(table, row, &mut values);
        values
    }

    fn inc(&mut self, table: &str, entries: &[(u64, u32, f64)]) -> Result<(), PsError> {
        let cells: Vec<Cell> = entries
            .iter()
            .map(|&(r, c, _)| self.schema.cell(table, r, c))
            .collect::<Result<_, _>>()?;
        for (cell, &(_, _, d)) in cells.into_iter().zip(entries) {
            self.buffer.inc(cell, d);
        }
        Ok(())
    }

    fn put(&mut self, table: &str, row: u64, col: u32, value: f64) -> Result<(), PsError> {
        let cell = self.schema.cell(table, row, col)?;
        let allowed = match &self.rights {
            PutRights::Any => true,
            PutRights::Denied => false,
            PutRights::Cells(cells) => cells.contains(&cell),
        };
        if !allowed {
            return Err(PsError::PutNotPermitted {
                worker: self.worker,
                table: table.to_string(),
                row,
                col,
            });
        }
        self.buffer.put(cell, value);
        Ok(())
    }
}

/// Direct calls into shards living in this process.
pub struct LocalClient {
    core: ClientCore,
    shards: Vec<Arc<ParamServer>>,
}

impl LocalClient {
    pub fn new(
        worker: WorkerId,
        shards: Vec<Arc<ParamServer>>,
        log: Option<Arc<StalenessLog>>,
    ) -> Self {
        let schema = shards[0].schema().clone();
        Self {
            core: ClientCore::new(worker, schema, log),
            shards,
        }
    }
}

impl PsClient for LocalClient {
    fn worker(&self) -> WorkerId {
        self.core.worker
    }

    fn clock(&self) -> Clock {
        self.core.clock
    }

    fn schema(&self) -> &Schema {
        &self.core.schema
    }

    fn get(&mut self, table: &str, row: u64) -> Result<Vec<f64>, PsError> {
        let t = self.core.schema.table(table)?;
        self.core.schema.check_row(t, row)?;
        let shard = self.core.schema.shard_of(row);
        let read = self.shards[shard].get(table, row, self.core.worker)?;
        Ok(self.core.finish_read(t, row, read))
    }

    fn inc(&mut self, table: &str, entries: &[(u64, u32, f64)]) -> Result<(), PsError> {
        self.core.inc(table, entries)
    }

    fn put(&mut self, table: &str, row: u64, col: u32, value: f64) -> Result<(), PsError> {
        self.core.put(table, row, col, value)
    }

    fn commit(&mut self) -> Result<Clock, PsError> {
        let parts = self.core.buffer.take().split_by_shard(&self.core.schema);
        let (w, c) = (self.core.worker, self.core.clock);
        let mut first_err = None;
        for (shard, part) in self.shards.iter().zip(parts) {
            let staged = shard.stage(w, c, part.iter().map(|(k, v)| (*k, *v)));
            if let Err(e) = staged.and_then(|_| shard.commit(w, c)) {
                first_err.get_or_insert(e);
            }
        }
        self.core.clock += 1;
        match first_err {
            Some(e) => Err(e),
            None => Ok(self.core.clock),
        }
    }

    fn set_rights(&mut self, rights: PutRights) {
        self.core.rights = rights;
    }
}

/// Talks to shards over framed links, one per shard.
pub struct RemoteClient<L: Link> {
    core: ClientCore,
    links: Vec<L>,
}

impl<L: Link> RemoteClient<L> {
    /// Announces itself on every link with `HELLO`.
    pub fn connect(
        worker: WorkerId,
        schema: Arc<Schema>,
        mut links: Vec<L>,
        log: Option<Arc<StalenessLog>>,
    ) -> Result<Self, PsError> {
        assert_eq!(links.len(), schema.shards(), "one link per shard");
        for link in &mut links {
            link.send(&hello(Role::Worker, worker))?;
        }
        Ok(Self {
            core: ClientCore::new(worker, schema, log),
            links,
        })
    }

    fn reply(link: &mut L) -> Result<(u64, Vec<f64>), PsError> {
        match link.recv()? {
            Message::GetResp {
                status: Status::Ok,
                clock,
                values,
                ..
            } => Ok((clock, values)),
            Message::GetResp { status, detail, .. } => Err(PsError::from_status(status, detail)),
            other => Err(PsError::Transport(format!("unexpected reply {other:?}"))),
        }
    }
}

impl<L: Link> PsClient for RemoteClient<L> {
    fn worker(&self) -> WorkerId {
        self.core.worker
    }

    fn clock(&self) -> Clock {
        self.core.clock
    }

    fn schema(&self) -> &Schema {
        &self.core.schema
    }

    fn get(&mut self, table: &str, row: u64) -> Result<Vec<f64>, PsError> {
        let t = self.core.schema.table(table)?;
        self.core.schema.check_row(t, row)?;
        let link = &mut self.links[self.core.schema.shard_of(row)];
        link.send(&Message::GetReq {
            table: table.to_string(),
            row,
            reader: self.core.worker,
        })?;
        let (frontier, values) = Self::reply(link)?;
        let read = RowRead {
            values,
            reader_clock: self.core.clock,
            frontier,
        };
        Ok(self.core.finish_read(t, row, read))
    }

    fn inc(&mut self, table: &str, entries: &[(u64, u32, f64)]) -> Result<(), PsError> {
        self.core.inc(table, entries)
    }

    fn put(&mut self, table: &str, row: u64, col: u32, value: f64) -> Result<(), PsError> {
        self.core.put(table, row, col, value)
    }

    fn commit(&mut self) -> Result<Clock, PsError> {
        let parts = self.core.buffer.take().split_by_shard(&self.core.schema);
        let (w, c) = (self.core.worker, self.core.clock);
        let schema = self.core.schema.clone();
        for (link, part) in self.links.iter_mut().zip(parts) {
            let mut incs: BTreeMap<usize, Vec<IncEntry>> = BTreeMap::new();
            let mut puts = Vec::new();
            for (&(t, row, col), op) in part.iter() {
                match *op {
                    CellOp::Delta(delta) => incs.entry(t).or_default().push(IncEntry { row, col, delta }),
                    CellOp::Overwrite(value) => puts.push((t, row, col, value)),
                }
            }
            for (t, entries) in incs {
                link.send(&Message::Inc {
                    table: schema.spec(t).name.clone(),
                    producer: w,
                    clock: c,
                    entries,
                })?;
            }
            for (t, row, col, value) in puts {
                link.send(&Message::Put {
                    table: schema.spec(t).name.clone(),
                    row,
                    col,
                    value,
                    writer: w,
                    clock: c,
                })?;
            }
            link.send(&Message::ClockCommit { worker: w, clock: c })?;
        }
        let mut first_err = None;
        for link in &mut self.links {
            if let Err(e) = Self::reply(link) {
                first_err.get_or_insert(e);
            }
        }
        self.core.clock += 1;
        match first_err {
            Some(e) => Err(e),
            None => Ok(self.core.clock),
        }
    }

    fn set_rights(&mut self, rights: PutRights) {
        self.core.rights = rights;
    }

    /// Sends `SHUTDOWN` on every link.
    fn close(&mut self) -> Result<(), PsError> {
        for link in &mut self.links {
            link.send(&Message::Shutdown)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::TableSpec;
    use crate::transport::{expect_hello, loopback_pair, serve_connection};
    use mlps_core::StalenessBound;
    use std::thread;

    fn shards(n: usize, workers: usize, s: u64) -> Vec<Arc<ParamServer>> {
        let schema = Arc::new(Schema::new(vec![TableSpec::zeros("beta", 4, 4)], n));
        (0..n)
            .map(|i| Arc::new(ParamServer::new(i, schema.clone(), workers, StalenessBound(s))))
            .collect()
    }

    #[test]
    fn read_my_writes_before_commit() {
        let mut c = LocalClient::new(0, shards(2, 1, 0), None);
        c.inc("beta", &[(0, 0, 2.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(c.get("beta", 0).unwrap()[0], 4.0);
        c.inc("beta", &[(1, 0, 3.0), (1, 0, -3.0)]).unwrap();
        assert_eq!(c.get("beta", 1).unwrap()[0], 0.0);
    }

    #[test]
    fn put_rights_enforced() {
        let mut c = LocalClient::new(0, shards(1, 1, 0), None);
        assert!(matches!(
            c.put("beta", 0, 3, 0.5),
            Err(PsError::PutNotPermitted { .. })
        ));
        c.set_rights(PutRights::Cells([(0, 0, 3)].into_iter().collect()));
        c.put("beta", 0, 3, 0.5).unwrap();
        assert!(c.put("beta", 0, 2, 0.5).is_err());
        c.inc("beta", &[(0, 3, 0.1)]).unwrap();
        c.commit().unwrap();
        assert!((c.get("beta", 0).unwrap()[3] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn batch_checks_producer_and_timestamp() {
        let mut c = LocalClient::new(0, shards(1, 1, 0), None);
        let mut batch = UpdateBatch {
            table: "beta".into(),
            entries: vec![(2, 1, 1.5)],
            producer: 0,
            timestamp: 0,
        };
        c.inc_batch(&batch).unwrap();
        batch.timestamp = 3;
        assert!(c.inc_batch(&batch).is_err());
        c.commit().unwrap();
        assert_eq!(c.get("beta", 2).unwrap()[1], 1.5);
    }

    #[test]
    fn remote_matches_local() {
        let servers = shards(2, 2, 0);
        let mut links = Vec::new();
        let mut handles = Vec::new();
        for srv in &servers {
            let (client_end, mut server_end) = loopback_pair();
            let srv = srv.clone();
            handles.push(thread::spawn(move || {
                expect_hello(&mut server_end).unwrap();
                serve_connection(&srv, server_end).unwrap();
            }));
            links.push(client_end);
        }
        let log = Arc::new(StalenessLog::default());
        let schema = servers[0].schema().clone();
        let mut remote = RemoteClient::connect(0, schema, links, Some(log.clone())).unwrap();
        let mut local = LocalClient::new(1, servers.clone(), None);
        remote.inc("beta", &[(0, 0, 1.0), (3, 2, 2.0)]).unwrap();
        local.inc("beta", &[(0, 0, 1.0)]).unwrap();
        remote.commit().unwrap();
        local.commit().unwrap();
        assert_eq!(remote.get("beta", 0).unwrap()[0], 2.0);
        assert_eq!(local.get("beta", 3).unwrap()[2], 2.0);
        remote.set_rights(PutRights::Any);
        local.set_rights(PutRights::Any);
        remote.put("beta", 1, 1, 1.0).unwrap();
        local.put("beta", 1, 1, 2.0).unwrap();
        remote.commit().unwrap();
        assert!(matches!(local.commit(), Err(PsError::PutConflict { row: 1, col: 1, .. })));
        assert_eq!(log.total().count, 1);
        remote.close().unwrap();
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn moments() {
        let mut m = Moments::default();
        for x in [1.0, 2.0, 3.0] {
            m.push(x);
        }
        assert_eq!(m.mean(), 2.0);
        assert!((m.variance() - 2.0 / 3.0).abs() < 1e-15);
    }
}
