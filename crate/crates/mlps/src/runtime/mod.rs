//! The clock loop: schedule, push on every worker, pull, commit.
//!
//! Model-parallel apps run a scheduler thread that sends one decision per
//! clock, gathers every worker's partial result and hands them to the app's
//! aggregator, which writes through its own parameter-server client (an extra
//! participant in the vector clock). Data-parallel apps skip the scheduler:
//! each worker touches the whole model and advances at its own pace within
//! the staleness bound.

mod monitor;
mod scheduler;
mod wiring;

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use mlps_core::schedule::{BlockMap, CorrelationIndex, PriorityForm, ScheduleError};
use mlps_core::{Clock, ScheduleDecision, WorkerId};
use rand_chacha::ChaCha8Rng;

use crate::client::{Moments, PsClient, StalenessLog};
use crate::error::PsError;
use crate::server::ParamServer;
use crate::table::{ModelSnapshot, TableSpec};
use crate::transport::{ShardEndpoint, TransportError};

pub use scheduler::Decider;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ps(#[from] PsError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("no partial from worker {worker} for clock {clock} within {timeout:?}")]
    PartialTimeout {
        clock: Clock,
        worker: WorkerId,
        timeout: Duration,
    },
    #[error("{0} panicked")]
    Panicked(String),
    #[error("run aborted")]
    Aborted,
    #[error("{0}")]
    App(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Direct calls into in-process shards.
    InProc,
    /// Every message framed and sent over in-memory links.
    Loopback,
    /// Every message framed and sent over TCP on 127.0.0.1.
    Dist,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(Mode::InProc),
            "loopback" => Ok(Mode::Loopback),
            "dist" => Ok(Mode::Dist),
            other => Err(format!("unknown mode {other:?} (inproc|loopback|dist)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Model,
    Data,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    /// Data-parallel: every worker touches the whole model, no pull.
    Empty,
    /// Round-robin within fixed blocks; contiguous blocks when `None`.
    Fixed(Option<BlockMap>),
    /// Uniform picks with no dependency check.
    Random,
    /// Uniform proposal filtered by `|x_i . x_j| <= theta`.
    Srrp,
    /// Priority-weighted proposal filtered by `theta`.
    Priority,
    /// Proposal filtered to exactly uncorrelated pairs.
    Ideal,
}

impl FromStr for ScheduleKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "empty" => ScheduleKind::Empty,
            "fixed" => ScheduleKind::Fixed(None),
            "random" => ScheduleKind::Random,
            "srrp" => ScheduleKind::Srrp,
            "priority" => ScheduleKind::Priority,
            "ideal" => ScheduleKind::Ideal,
            other => {
                return Err(format!(
                    "unknown schedule {other:?} (empty|fixed|random|srrp|priority|ideal)"
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerParams {
    /// Candidates proposed per clock; `0` means `2 * workers`.
    pub candidates: usize,
    pub theta: f64,
    pub eta: f64,
    pub form: PriorityForm,
    /// Run one contiguous fixed sweep before priority scheduling starts.
    pub bootstrap: bool,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            candidates: 0,
            theta: 0.1,
            eta: 1e-6,
            form: PriorityForm::Change,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopRule {
    pub max_clocks: u64,
    /// Stop once the objective's relative change over `window` evaluations
    /// drops below this.
    pub tol: Option<f64>,
    pub window: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            max_clocks: 100,
            tol: None,
            window: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub workers: usize,
    pub staleness: u64,
    pub seed: u64,
    pub mode: Mode,
    pub shards: usize,
    pub schedule: ScheduleKind,
    pub scheduler: SchedulerParams,
    pub stop: StopRule,
    pub objective_stride: u64,
    pub partial_timeout: Duration,
    /// Extra per-clock sleep for each worker, indexed by worker id.
    pub delays: Vec<Duration>,
    pub record_trajectory: bool,
    pub record_decisions: bool,
    /// Capture every frame sent on framed links.
    pub tap: bool,
    /// Compute the spectral-radius diagnostics for `epsilon`.
    pub diagnostics: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            staleness: 0,
            seed: 0,
            mode: Mode::InProc,
            shards: 1,
            schedule: ScheduleKind::Empty,
            scheduler: SchedulerParams::default(),
            stop: StopRule::default(),
            objective_stride: 1,
            partial_timeout: Duration::from_secs(60),
            delays: Vec::new(),
            record_trajectory: false,
            record_decisions: false,
            tap: false,
            diagnostics: false,
        }
    }
}

impl RunConfig {
    pub fn candidates(&self) -> usize {
        if self.scheduler.candidates == 0 {
            2 * self.workers
        } else {
            self.scheduler.candidates
        }
    }

    fn validate(&self, app: &dyn App) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.shards == 0 {
            return bad("shards must be at least 1".into());
        }
        if self.objective_stride == 0 {
            return bad("objective stride must be at least 1".into());
        }
        match (app.parallelism(), &self.schedule) {
            (Parallelism::Data, ScheduleKind::Empty) => {}
            (Parallelism::Data, k) => return bad(format!("data-parallel app needs the empty schedule, got {k:?}")),
            (Parallelism::Model, ScheduleKind::Empty) => {
                return bad("model-parallel app needs a non-empty schedule".into())
            }
            (Parallelism::Model, _) => {}
        }
        if matches!(
            self.schedule,
            ScheduleKind::Srrp | ScheduleKind::Priority | ScheduleKind::Ideal
        ) {
            if self.candidates() <= self.workers {
                return bad(format!(
                    "q = {} must exceed workers = {}",
                    self.candidates(),
                    self.workers
                ));
            }
            if !(self.scheduler.theta > 0.0 && self.scheduler.theta <= 1.0) {
                return bad(format!("theta = {} must lie in (0, 1]", self.scheduler.theta));
            }
            if app.correlation_index().is_none() {
                return bad("schedule needs feature correlations the app does not provide".into());
            }
        }
        if !(self.scheduler.eta > 0.0) {
            return bad(format!("eta = {} must be positive", self.scheduler.eta));
        }
        Ok(())
    }
}

/// A parameter's value before and after one pull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamChange {
    pub index: usize,
    pub old: f64,
    pub new: f64,
}

pub struct PushContext<'a> {
    pub worker: WorkerId,
    pub workers: usize,
    pub clock: Clock,
    pub client: &'a mut dyn PsClient,
    pub rng: &'a mut ChaCha8Rng,
}

pub struct PullContext<'a> {
    pub clock: Clock,
    pub client: &'a mut dyn PsClient,
}

/// The application contract driven by the runtime.
pub trait App: Send + Sync + 'static {
    fn parallelism(&self) -> Parallelism;
    fn tables(&self) -> Vec<TableSpec>;
    /// Number of schedulable parameters.
    fn model_size(&self) -> usize;

    fn correlation_index(&self) -> Option<CorrelationIndex> {
        None
    }

    /// Cell holding parameter `j`, used to grant overwrite rights to the
    /// worker a decision assigns it to.
    fn param_cell(&self, _j: usize) -> Option<(String, u64, u32)> {
        None
    }

    fn push(
        &self,
        ctx: &mut PushContext<'_>,
        decision: &ScheduleDecision,
    ) -> Result<Vec<f64>, RunError>;

    /// Aggregates partials ordered by worker id. Only called for
    /// model-parallel apps.
    fn pull(
        &self,
        _ctx: &mut PullContext<'_>,
        _decision: &ScheduleDecision,
        _partials: &[Vec<f64>],
    ) -> Result<Vec<ParamChange>, RunError> {
        Ok(Vec::new())
    }

    fn objective(&self, model: &ModelSnapshot) -> f64;
}

/// One row of the metrics series.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub clock: Clock,
    pub wall_ms: u64,
    pub objective: f64,
    pub degree: usize,
    pub staleness_mean: f64,
    pub staleness_var: f64,
    pub epsilon: Option<f64>,
}

/// Inputs to the `epsilon` diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub rho: f64,
    pub pairs: f64,
    pub d: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub metrics: Vec<MetricsRecord>,
    pub initial_objective: f64,
    pub final_model: ModelSnapshot,
    /// Model after each clock, when requested.
    pub trajectory: Vec<(Clock, ModelSnapshot)>,
    pub staleness: Moments,
    pub decisions: Vec<ScheduleDecision>,
    pub pulls: u64,
    /// Frames sent per connection end, when tapped.
    pub transcripts: BTreeMap<String, Vec<Vec<u8>>>,
    /// Clock at which the tolerance rule fired.
    pub stopped_at: Option<Clock>,
    pub diagnostics: Option<Diagnostics>,
}

impl RunReport {
    pub fn observe_staleness(&self) -> (f64, f64) {
        (self.staleness.mean(), self.staleness.variance())
    }

    pub fn final_objective(&self) -> f64 {
        self.metrics
            .last()
            .map_or(self.initial_objective, |m| m.objective)
    }
}

pub(crate) struct Shared {
    pub stop: AtomicBool,
    pub abort: AtomicBool,
    pub failed: AtomicBool,
    pub failure: Mutex<Option<RunError>>,
    pub pulls: AtomicU64,
    pub degrees: Mutex<BTreeMap<Clock, usize>>,
    pub decisions: Mutex<Vec<ScheduleDecision>>,
    pub metrics: Mutex<Vec<MetricsRecord>>,
    pub log: Arc<StalenessLog>,
    pub start: Instant,
}

impl Shared {
    fn halted(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
            || self.abort.load(Ordering::SeqCst)
            || self.failed.load(Ordering::SeqCst)
    }

    /// Records the first failure and unblocks everyone else.
    fn fail(&self, name: &str, err: RunError, servers: &[Arc<ParamServer>]) {
        let mut slot = self.failure.lock().unwrap_or_else(|e| e.into_inner());
        if slot.is_none() && !self.abort.load(Ordering::SeqCst) {
            log::error!("{name} failed: {err}");
            *slot = Some(err);
            self.failed.store(true, Ordering::SeqCst);
        }
        drop(slot);
        for s in servers {
            s.shutdown();
        }
    }
}

/// A run in progress.
pub struct RunHandle {
    shared: Arc<Shared>,
    servers: Vec<Arc<ParamServer>>,
    threads: Vec<(String, JoinHandle<Result<(), RunError>>)>,
    monitor: Option<JoinHandle<monitor::MonitorOutput>>,
    endpoints: Vec<ShardEndpoint>,
    taps: BTreeMap<String, crate::transport::Tap>,
    diagnostics: Option<Diagnostics>,
}

impl RunHandle {
    /// Metrics recorded so far.
    pub fn metrics(&self) -> Vec<MetricsRecord> {
        self.shared
            .metrics
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn observe_staleness(&self) -> (f64, f64) {
        let m = self.shared.log.total();
        (m.mean(), m.variance())
    }

    /// Stops all workers; blocked reads are interrupted.
    pub fn abort(&self) {
        self.shared.abort.store(true, Ordering::SeqCst);
        for s in &self.servers {
            s.shutdown();
        }
    }

    pub fn is_finished(&self) -> bool {
        self.threads.iter().all(|(_, t)| t.is_finished())
    }

    /// Waits for completion and returns the report, or the first failure.
    pub fn join(mut self) -> Result<RunReport, RunError> {
        for (name, t) in self.threads.drain(..) {
            let outcome = t
                .join()
                .unwrap_or_else(|_| Err(RunError::Panicked(name.clone())));
            if let Err(e) = outcome {
                self.shared.fail(&name, e, &self.servers);
            }
        }
        for s in &self.servers {
            s.clear_hook();
            s.shutdown();
        }
        let out = self
            .monitor
            .take()
            .expect("monitor joined once")
            .join()
            .map_err(|_| RunError::Panicked("monitor".into()))?;
        for ep in self.endpoints.drain(..) {
            if let Err(e) = ep.join() {
                self.shared.fail("shard endpoint", e.into(), &self.servers);
            }
        }
        if let Some(e) = self
            .shared
            .failure
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .take()
        {
            return Err(e);
        }
        if self.shared.abort.load(Ordering::SeqCst) {
            return Err(RunError::Aborted);
        }
        if let Some(conflict) = self.servers.iter().flat_map(|s| s.conflicts()).next() {
            return Err(conflict.into());
        }
        let transcripts = self
            .taps
            .iter()
            .map(|(k, v)| (k.clone(), v.lock().unwrap_or_else(|e| e.into_inner()).clone()))
            .collect();
        Ok(RunReport {
            metrics: out.metrics,
            initial_objective: out.initial_objective,
            final_model: out.final_model,
            trajectory: out.trajectory,
            staleness: self.shared.log.total(),
            decisions: std::mem::take(
                &mut *self.shared.decisions.lock().unwrap_or_else(|e| e.into_inner()),
            ),
            pulls: self.shared.pulls.load(Ordering::SeqCst),
            transcripts,
            stopped_at: out.stopped_at,
            diagnostics: self.diagnostics,
        })
    }
}

/// Starts a run in the background.
pub fn start<A: App>(app: Arc<A>, cfg: RunConfig) -> Result<RunHandle, RunError> {
    cfg.validate(app.as_ref())?;
    wiring::start(app, cfg)
}

/// Runs to completion.
pub fn run<A: App>(app: Arc<A>, cfg: RunConfig) -> Result<RunReport, RunError> {
    start(app, cfg)?.join()
}

/// Sample mean and variance of per-read observed staleness.
pub fn observe_staleness(handle: &RunHandle) -> (f64, f64) {
    handle.observe_staleness()
}
