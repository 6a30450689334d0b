//! Decision generation and the scheduler/worker control loops.

use std::collections::BTreeSet;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;

use mlps_core::protocol::Message;
use mlps_core::schedule::{
    schedule_fix, schedule_ideal, schedule_random, schedule_srrp, BlockMap, CorrelationIndex,
    PriorityState, SrrpConfig,
};
use mlps_core::{Clock, ScheduleDecision, WorkerId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{App, ParamChange, PullContext, PushContext, RunConfig, RunError, ScheduleKind, Shared};
use crate::client::{PsClient, PutRights};
use crate::error::PsError;
use crate::transport::{Link, TransportError};

/// Scheduler randomness uses stream 0; worker `w` uses stream `w + 1`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Produces the decision for each clock and folds pull results back into
/// the priority weights.
pub struct Decider {
    kind: ScheduleKind,
    workers: usize,
    srrp: SrrpConfig,
    form: mlps_core::schedule::PriorityForm,
    corr: Option<CorrelationIndex>,
    prio: PriorityState,
    rng: ChaCha8Rng,
    fixed: Option<BlockMap>,
    bootstrap: Option<BlockMap>,
    pulls: u64,
}

impl Decider {
    pub fn new(
        cfg: &RunConfig,
        d: usize,
        corr: Option<CorrelationIndex>,
    ) -> Result<Self, RunError> {
        let contiguous = || BlockMap::contiguous(d, cfg.workers);
        let fixed = match &cfg.schedule {
            ScheduleKind::Fixed(Some(map)) => {
                if map.workers() != cfg.workers || map.model_size() != d {
                    return Err(RunError::Config(format!(
                        "block map covers {} parameters over {} workers, run has {d} over {}",
                        map.model_size(),
                        map.workers(),
                        cfg.workers
                    )));
                }
                Some(map.clone())
            }
            ScheduleKind::Fixed(None) => Some(contiguous()?),
            _ => None,
        };
        let bootstrap = if cfg.schedule == ScheduleKind::Priority && cfg.scheduler.bootstrap {
            Some(contiguous()?)
        } else {
            None
        };
        Ok(Self {
            kind: cfg.schedule.clone(),
            workers: cfg.workers,
            srrp: SrrpConfig {
                workers: cfg.workers,
                candidates: cfg.candidates(),
                theta: cfg.scheduler.theta,
            },
            form: cfg.scheduler.form,
            corr,
            prio: PriorityState::new(d, cfg.scheduler.eta)?,
            rng: stream_rng(cfg.seed, 0),
            fixed,
            bootstrap,
            pulls: 0,
        })
    }

    pub fn priority(&self) -> &PriorityState {
        &self.prio
    }

    pub fn decide(&mut self, clock: Clock) -> Result<ScheduleDecision, RunError> {
        let corr = &mut self.corr;
        let rng = &mut self.rng;
        let mut decision = match (&self.kind, &self.bootstrap) {
            (_, Some(map)) if clock < map.sweep_len() as u64 => schedule_fix(clock, map),
            (ScheduleKind::Fixed(_), _) => {
                schedule_fix(clock, self.fixed.as_ref().expect("fixed map"))
            }
            (ScheduleKind::Random, _) => schedule_random(clock, self.workers, self.prio.len(), rng)?,
            (ScheduleKind::Srrp, _) => {
                let corr = corr.as_mut().ok_or_else(missing_corr)?;
                schedule_srrp(clock, &self.srrp, corr, None, rng)?
            }
            (ScheduleKind::Priority, _) => {
                let corr = corr.as_mut().ok_or_else(missing_corr)?;
                schedule_srrp(clock, &self.srrp, corr, Some(&self.prio), rng)?
            }
            (ScheduleKind::Ideal, _) => {
                let corr = corr.as_mut().ok_or_else(missing_corr)?;
                schedule_ideal(clock, &self.srrp, corr, None, rng)?
            }
            (ScheduleKind::Empty, _) => ScheduleDecision::whole_model(clock, self.workers),
        };
        decision.priority_version = self.pulls;
        Ok(decision)
    }

    pub fn record(&mut self, changes: &[ParamChange]) {
        for c in changes {
            self.prio.record(self.form, c.index, c.old, c.new);
        }
        self.pulls += 1;
    }
}

fn missing_corr() -> RunError {
    RunError::Config("schedule needs a correlation index".into())
}

pub(crate) struct SchedulerTask<A: App> {
    pub app: Arc<A>,
    pub cfg: RunConfig,
    pub decider: Decider,
    pub links: Vec<Box<dyn Link>>,
    pub aggregator: Box<dyn PsClient>,
    pub shared: Arc<Shared>,
}

impl<A: App> SchedulerTask<A> {
    pub fn run(mut self) -> Result<(), RunError> {
        let result = self.clocks();
        for link in &mut self.links {
            let _ = link.send(&Message::Shutdown);
        }
        let _ = self.aggregator.close();
        result
    }

    fn clocks(&mut self) -> Result<(), RunError> {
        let max = self.cfg.stop.max_clocks;
        let workers = self.links.len();
        let mut next = if max > 0 {
            Some(self.decider.decide(0)?)
        } else {
            None
        };
        for t in 0..max {
            if self.shared.halted() {
                break;
            }
            let decision = next.take().expect("decision computed one clock ahead");
            self.shared
                .degrees
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .insert(t, decision.degree());
            if self.cfg.record_decisions {
                self.shared
                    .decisions
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .push(decision.clone());
            }
            let msg = Message::Decision(decision.clone());
            for link in &mut self.links {
                link.send(&msg)?;
            }
            if t + 1 < max {
                next = Some(self.decider.decide(t + 1)?);
            }
            let mut partials = Vec::with_capacity(workers);
            for (w, link) in self.links.iter_mut().enumerate() {
                match link.recv_timeout(self.cfg.partial_timeout) {
                    Ok(Message::Partial {
                        clock,
                        worker,
                        values,
                    }) if clock == t && worker as usize == w => partials.push(values),
                    Ok(other) => {
                        return Err(TransportError::Unexpected(format!(
                            "expected partial {t} from worker {w}, got {other:?}"
                        ))
                        .into())
                    }
                    Err(TransportError::Timeout) => {
                        return Err(RunError::PartialTimeout {
                            clock: t,
                            worker: w as WorkerId,
                            timeout: self.cfg.partial_timeout,
                        })
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let changes = self.app.pull(
                &mut PullContext {
                    clock: t,
                    client: self.aggregator.as_mut(),
                },
                &decision,
                &partials,
            )?;
            self.aggregator.commit()?;
            self.shared.pulls.fetch_add(1, Ordering::SeqCst);
            self.decider.record(&changes);
            for link in &mut self.links {
                link.send(&Message::PullDone { clock: t })?;
            }
        }
        Ok(())
    }
}

pub(crate) struct WorkerTask<A: App> {
    pub app: Arc<A>,
    pub cfg: RunConfig,
    pub worker: WorkerId,
    pub client: Box<dyn PsClient>,
    pub link: Option<Box<dyn Link>>,
    pub shared: Arc<Shared>,
}

impl<A: App> WorkerTask<A> {
    pub fn run(mut self) -> Result<(), RunError> {
        let result = match self.link.take() {
            Some(link) => self.model_parallel(link),
            None => self.data_parallel(),
        };
        let _ = self.client.close();
        match result {
            Err(RunError::Ps(PsError::Interrupted)) if self.shared.halted() => Ok(()),
            other => other,
        }
    }

    fn delay(&self) {
        if let Some(d) = self.cfg.delays.get(self.worker as usize) {
            if !d.is_zero() {
                thread::sleep(*d);
            }
        }
    }

    fn rights(&self, decision: &ScheduleDecision) -> PutRights {
        let cells: BTreeSet<_> = decision
            .assigned_to(self.worker)
            .iter()
            .filter_map(|&j| self.app.param_cell(j))
            .filter_map(|(t, r, c)| self.client.schema().cell(&t, r, c).ok())
            .collect();
        if cells.is_empty() {
            PutRights::Denied
        } else {
            PutRights::Cells(cells)
        }
    }

    fn model_parallel(&mut self, mut link: Box<dyn Link>) -> Result<(), RunError> {
        let mut rng = stream_rng(self.cfg.seed, self.worker as u64 + 1);
        loop {
            let decision = match link.recv() {
                Ok(Message::Decision(d)) => d,
                Ok(Message::Shutdown) | Err(TransportError::Closed) => return Ok(()),
                Ok(other) => {
                    return Err(TransportError::Unexpected(format!("worker got {other:?}")).into())
                }
                Err(e) => return Err(e.into()),
            };
            if decision.clock != self.client.clock() {
                return Err(RunError::App(format!(
                    "worker {} at clock {} received decision for clock {}",
                    self.worker,
                    self.client.clock(),
                    decision.clock
                )));
            }
            let rights = self.rights(&decision);
            self.client.set_rights(rights);
            self.delay();
            let values = self.app.push(
                &mut PushContext {
                    worker: self.worker,
                    workers: self.cfg.workers,
                    clock: decision.clock,
                    client: self.client.as_mut(),
                    rng: &mut rng,
                },
                &decision,
            )?;
            link.send(&Message::Partial {
                clock: decision.clock,
                worker: self.worker,
                values,
            })?;
            match link.recv() {
                Ok(Message::PullDone { clock }) if clock == decision.clock => {
                    self.client.commit()?;
                }
                Ok(Message::Shutdown) | Err(TransportError::Closed) => return Ok(()),
                Ok(other) => {
                    return Err(TransportError::Unexpected(format!("worker got {other:?}")).into())
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn data_parallel(&mut self) -> Result<(), RunError> {
        let mut rng = stream_rng(self.cfg.seed, self.worker as u64 + 1);
        for t in 0..self.cfg.stop.max_clocks {
            if self.shared.halted() {
                break;
            }
            self.delay();
            let decision = ScheduleDecision::whole_model(t, self.cfg.workers);
            self.app.push(
                &mut PushContext {
                    worker: self.worker,
                    workers: self.cfg.workers,
                    clock: t,
                    client: self.client.as_mut(),
                    rng: &mut rng,
                },
                &decision,
            )?;
            self.client.commit()?;
        }
        Ok(())
    }
}
