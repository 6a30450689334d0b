//! Assembles shard snapshots into per-clock model states, evaluates the
//! objective and applies the stop rule.

use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::sync::mpsc::Receiver;
use std::sync::Arc;

use mlps_core::schedule::compute_epsilon;
use mlps_core::Clock;

use super::{App, Diagnostics, MetricsRecord, RunConfig, Shared};
use crate::server::{assemble, ParamServer, ShardSnapshot};
use crate::table::{ModelSnapshot, Schema};

pub(crate) struct MonitorOutput {
    pub metrics: Vec<MetricsRecord>,
    pub initial_objective: f64,
    pub final_model: ModelSnapshot,
    pub trajectory: Vec<(Clock, ModelSnapshot)>,
    pub stopped_at: Option<Clock>,
}

pub(crate) struct Monitor<A: App> {
    pub app: Arc<A>,
    pub cfg: RunConfig,
    pub schema: Arc<Schema>,
    pub shared: Arc<Shared>,
    pub servers: Vec<Arc<ParamServer>>,
    pub diagnostics: Option<Diagnostics>,
    pub data_parallel: bool,
}

impl<A: App> Monitor<A> {
    pub fn run(self, rx: Receiver<ShardSnapshot>) -> MonitorOutput {
        let shards = self.schema.shards();
        let mut parts: BTreeMap<Clock, Vec<ShardSnapshot>> = BTreeMap::new();
        let mut next: Clock = 0;
        let mut out = MonitorOutput {
            metrics: Vec::new(),
            initial_objective: f64::NAN,
            final_model: ModelSnapshot::default(),
            trajectory: Vec::new(),
            stopped_at: None,
        };
        let mut history: Vec<f64> = Vec::new();
        let (mut sum_p, mut sum_p2, mut n_p) = (0.0f64, 0.0f64, 0u64);
        for snap in rx {
            parts.entry(snap.frontier).or_default().push(snap);
            while parts.get(&next).is_some_and(|v| v.len() == shards) {
                let model = assemble(&self.schema, &parts.remove(&next).expect("present"));
                let frontier = next;
                next += 1;
                if frontier == 0 {
                    out.initial_objective = self.app.objective(&model);
                    out.final_model = model;
                    continue;
                }
                if out.stopped_at.is_some() {
                    continue;
                }
                let clock = frontier - 1;
                let degree = self
                    .shared
                    .degrees
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .get(&clock)
                    .copied()
                    .unwrap_or(self.cfg.workers);
                sum_p += degree as f64;
                sum_p2 += (degree * degree) as f64;
                n_p += 1;
                let last = clock + 1 == self.cfg.stop.max_clocks;
                if clock % self.cfg.objective_stride == 0 || last {
                    let objective = self.app.objective(&model);
                    let st = self.shared.log.at(clock);
                    let epsilon = self.diagnostics.map(|d| {
                        let ep = sum_p / n_p as f64;
                        let ep2 = sum_p2 / n_p as f64;
                        compute_epsilon(d.d, ep, ep2, d.rho, d.pairs.max(1.0))
                    });
                    let record = MetricsRecord {
                        clock,
                        wall_ms: self.shared.start.elapsed().as_millis() as u64,
                        objective,
                        degree,
                        staleness_mean: st.mean(),
                        staleness_var: st.variance(),
                        epsilon,
                    };
                    out.metrics.push(record.clone());
                    self.shared
                        .metrics
                        .lock()
                        .unwrap_or_else(|e| e.into_inner())
                        .push(record);
                    history.push(objective);
                    if self.converged(&history) {
                        out.stopped_at = Some(clock);
                        self.shared.stop.store(true, Ordering::SeqCst);
                        if self.data_parallel {
                            // workers past the stop clock may be waiting on
                            // ones that already quit
                            for s in &self.servers {
                                s.shutdown();
                            }
                        }
                    }
                }
                if self.cfg.record_trajectory {
                    out.trajectory.push((clock, model.clone()));
                }
                out.final_model = model;
            }
        }
        out
    }

    fn converged(&self, history: &[f64]) -> bool {
        let Some(tol) = self.cfg.stop.tol else {
            return false;
        };
        let w = self.cfg.stop.window.max(1);
        if history.len() <= w {
            return false;
        }
        let now = history[history.len() - 1];
        let then = history[history.len() - 1 - w];
        (then - now).abs() <= tol * now.abs().max(f64::MIN_POSITIVE)
    }
}
