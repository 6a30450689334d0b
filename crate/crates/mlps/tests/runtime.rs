use std::sync::Arc;
use std::time::Duration;

use mlps::runtime::{
    run, start, App, Mode, Parallelism, PushContext, RunConfig, RunError, ScheduleKind, StopRule,
};
use mlps::table::{ModelSnapshot, TableSpec};
use mlps_core::ScheduleDecision;

/// Each worker adds 1 to cell (0, 0) every clock.
struct Counter;

impl App for Counter {
    fn parallelism(&self) -> Parallelism {
        Parallelism::Data
    }
    fn tables(&self) -> Vec<TableSpec> {
        vec![TableSpec::zeros("c", 1, 1)]
    }
    fn model_size(&self) -> usize {
        1
    }
    fn push(&self, ctx: &mut PushContext<'_>, _: &ScheduleDecision) -> Result<Vec<f64>, RunError> {
        ctx.client.get("c", 0)?;
        ctx.client.inc("c", &[(0, 0, 1.0)])?;
        Ok(Vec::new())
    }
    fn objective(&self, model: &ModelSnapshot) -> f64 {
        model.flat("c")[0]
    }
}

fn data_cfg(workers: usize, s: u64, clocks: u64, mode: Mode) -> RunConfig {
    RunConfig {
        workers,
        staleness: s,
        mode,
        shards: 1,
        schedule: ScheduleKind::Empty,
        stop: StopRule {
            max_clocks: clocks,
            ..StopRule::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn counting_app_sums_every_increment() {
    for mode in [Mode::InProc, Mode::Loopback, Mode::Dist] {
        let report = run(Arc::new(Counter), data_cfg(3, 0, 5, mode)).unwrap();
        assert_eq!(report.final_model.flat("c"), vec![15.0], "{mode:?}");
        let objs: Vec<f64> = report.metrics.iter().map(|m| m.objective).collect();
        assert_eq!(objs, vec![3.0, 6.0, 9.0, 12.0, 15.0]);
        assert_eq!(report.pulls, 0);
    }
}

#[test]
fn single_worker_sees_no_staleness() {
    let report = run(Arc::new(Counter), data_cfg(1, 2, 6, Mode::InProc)).unwrap();
    assert_eq!(report.observe_staleness(), (0.0, 0.0));
}

#[test]
fn bulk_synchronous_staleness_at_most_one() {
    let report = run(Arc::new(Counter), data_cfg(4, 0, 20, Mode::InProc)).unwrap();
    assert!(report.observe_staleness().0 <= 1.0);
}

#[test]
fn abort_interrupts_a_blocked_run() {
    let mut cfg = data_cfg(2, 0, 1_000_000, Mode::InProc);
    cfg.delays = vec![Duration::ZERO, Duration::from_millis(5)];
    let handle = start(Arc::new(Counter), cfg).unwrap();
    std::thread::sleep(Duration::from_millis(50));
    assert!(!handle.metrics().is_empty());
    handle.abort();
    assert!(matches!(handle.join(), Err(RunError::Aborted)));
}

#[test]
fn rejects_mismatched_schedule() {
    let mut cfg = data_cfg(2, 0, 3, Mode::InProc);
    cfg.schedule = ScheduleKind::Srrp;
    assert!(matches!(run(Arc::new(Counter), cfg), Err(RunError::Config(_))));
}
