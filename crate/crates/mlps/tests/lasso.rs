use std::sync::Arc;

use mlps::apps::lasso::LassoApp;
use mlps::harness::gen::{gen_lasso, SyntheticLassoSpec};
use mlps::runtime::{run, Mode, MetricsRecord, RunConfig, ScheduleKind, SchedulerParams, StopRule};
use mlps_core::lasso::{LassoProblem, LassoState};
use mlps_core::schedule::CorrelationIndex;

fn instance(seed: u64, block_size: usize, block_corr: f64) -> LassoProblem {
    gen_lasso(&SyntheticLassoSpec {
        n: 200,
        d: 100,
        sparsity: 10,
        block_size,
        block_corr,
        noise_sd: 0.1,
        lambda: 0.05,
        seed,
    })
    .unwrap()
    .problem
}

fn cfg(workers: usize, schedule: ScheduleKind, clocks: u64, mode: Mode) -> RunConfig {
    RunConfig {
        workers,
        mode,
        shards: 2,
        schedule,
        stop: StopRule {
            max_clocks: clocks,
            ..StopRule::default()
        },
        ..RunConfig::default()
    }
}

/// Objective and coefficients after each single-coordinate update in the
/// order 0, 1, ..., d-1, 0, ...
fn sequential_oracle(problem: &LassoProblem, clocks: usize) -> Vec<(f64, Vec<f64>)> {
    let mut state = LassoState::zeros(problem);
    let d = problem.features();
    (0..clocks)
        .map(|t| {
            let j = t % d;
            let v = state.coordinate_update(problem, j);
            state.set(problem, j, v);
            (state.objective(), state.beta().to_vec())
        })
        .collect()
}

#[test]
fn single_worker_matches_cyclic_descent() {
    for seed in 0..2 {
        let problem = instance(seed, 1, 0.0);
        let oracle = sequential_oracle(&problem, 150);
        let app = Arc::new(LassoApp::new(problem, 1));
        let mut c = cfg(1, ScheduleKind::Fixed(None), 150, Mode::InProc);
        c.record_trajectory = true;
        let report = run(app.clone(), c).unwrap();
        assert_eq!(report.metrics.len(), 150);
        assert_eq!(report.trajectory.len(), 150);
        for (t, ((m, (clock, model)), (obj, beta))) in report
            .metrics
            .iter()
            .zip(&report.trajectory)
            .zip(&oracle)
            .enumerate()
        {
            assert_eq!((m.clock, *clock), (t as u64, t as u64));
            assert!((m.objective - obj).abs() <= 1e-10, "clock {t}");
            let got = app.beta(model);
            let worst = got.iter().zip(beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-10, "clock {t}: {worst}");
        }
    }
}

fn stable(m: &[MetricsRecord]) -> Vec<(u64, u64, usize, u64, u64)> {
    m.iter()
        .map(|r| {
            (
                r.clock,
                r.objective.to_bits(),
                r.degree,
                r.staleness_mean.to_bits(),
                r.staleness_var.to_bits(),
            )
        })
        .collect()
}

#[test]
fn modes_agree_and_framed_transcripts_match() {
    let problem = instance(7, 5, 0.6);
    let app = Arc::new(LassoApp::new(problem, 2));
    let mut reports = Vec::new();
    for mode in [Mode::InProc, Mode::Loopback, Mode::Dist] {
        let mut c = cfg(2, ScheduleKind::Priority, 40, mode);
        c.seed = 11;
        c.tap = mode != Mode::InProc;
        c.scheduler.theta = 0.3;
        reports.push(run(app.clone(), c).unwrap());
    }
    assert_eq!(stable(&reports[0].metrics), stable(&reports[1].metrics));
    assert_eq!(stable(&reports[0].metrics), stable(&reports[2].metrics));
    assert_eq!(reports[0].final_model, reports[2].final_model);
    let (lo, tcp) = (&reports[1].transcripts, &reports[2].transcripts);
    assert!(!lo.is_empty());
    assert_eq!(lo.keys().collect::<Vec<_>>(), tcp.keys().collect::<Vec<_>>());
    for (k, frames) in lo {
        assert!(!frames.is_empty(), "{k}");
        assert_eq!(frames, &tcp[k], "{k}");
    }
}

#[test]
fn srrp_decisions_respect_theta_and_pipeline() {
    let problem = instance(3, 10, 0.9);
    let x = problem.x().clone();
    let app = Arc::new(LassoApp::new(problem, 4));
    for kind in [ScheduleKind::Srrp, ScheduleKind::Priority] {
        let mut c = cfg(4, kind.clone(), 60, Mode::InProc);
        c.record_decisions = true;
        c.scheduler = SchedulerParams {
            theta: 0.5,
            candidates: 12,
            ..SchedulerParams::default()
        };
        let report = run(app.clone(), c).unwrap();
        assert_eq!(report.decisions.len(), 60);
        assert_eq!(report.pulls, 60);
        let mut corr = CorrelationIndex::from_columns(x.samples(), x.as_column_major().to_vec()).unwrap();
        for (t, dec) in report.decisions.iter().enumerate() {
            assert_eq!(dec.clock, t as u64);
            assert_eq!(dec.priority_version, (t as u64).saturating_sub(1), "{kind:?}");
            let idx = dec.indices();
            assert!(!idx.is_empty() && idx.len() <= 4);
            let bootstrap = kind == ScheduleKind::Priority && t < 25;
            if !bootstrap {
                for (a, &i) in idx.iter().enumerate() {
                    for &j in &idx[a + 1..] {
                        assert!(corr.correlation(i, j).abs() <= 0.5, "{kind:?} clock {t}: {i},{j}");
                    }
                }
            }
        }
    }
}

#[test]
fn random_delays_do_not_stall() {
    let problem = instance(5, 1, 0.0);
    let app = Arc::new(LassoApp::new(problem, 3));
    let mut c = cfg(3, ScheduleKind::Random, 30, Mode::Loopback);
    c.delays = vec![
        std::time::Duration::from_millis(0),
        std::time::Duration::from_millis(3),
        std::time::Duration::from_millis(1),
    ];
    let report = run(app, c).unwrap();
    assert_eq!(report.metrics.len(), 30);
    assert!(report.final_objective() < report.initial_objective);
}
