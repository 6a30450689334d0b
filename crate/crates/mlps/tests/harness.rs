use std::sync::Arc;

use mlps::apps::lasso::LassoApp;
use mlps::harness::config::{AppKind, Config, Settings};
use mlps::harness::gen::{gen_lasso, SyntheticLassoSpec};
use mlps::harness::output::{metrics_without_wall, partial_path, METRICS_HEADER};
use mlps::harness::{run_arm, run_configured, HarnessError};
use mlps::runtime::{
    run, App, MetricsRecord, Mode, Parallelism, PushContext, RunConfig, RunError, ScheduleKind,
    SchedulerParams, StopRule,
};
use mlps::table::{ModelSnapshot, TableSpec};
use mlps_core::lasso::{cyclic_coordinate_descent, fixed_point_violation};
use mlps_core::ScheduleDecision;

fn small_lasso() -> Settings {
    let mut s = Settings::defaults(AppKind::Lasso);
    s.n = 120;
    s.d = 40;
    s.sparsity = 5;
    s.block_size = 4;
    s.clocks = 40;
    s.workers = 3;
    s
}

#[test]
fn rerunning_a_manifest_reproduces_the_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let s = small_lasso();
    run_configured(&s, dir.path(), "first").unwrap();
    let manifest = Config::load(&dir.path().join("first.manifest")).unwrap();
    let again = Settings::from_config(&manifest).unwrap();
    assert!(again.input_hash.is_some());
    run_configured(&again, dir.path(), "second").unwrap();

    let first = std::fs::read_to_string(dir.path().join("first.csv")).unwrap();
    let second = std::fs::read_to_string(dir.path().join("second.csv")).unwrap();
    assert_eq!(first.lines().next().unwrap(), METRICS_HEADER.join(","));
    assert_eq!(first.lines().count(), 41);
    assert_eq!(metrics_without_wall(&first), metrics_without_wall(&second));
}

#[test]
fn a_changed_input_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = small_lasso();
    s.input_hash = Some("sha256:0000".into());
    let err = run_configured(&s, dir.path(), "x").unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

/// Adds one per clock and fails at clock 3.
struct Failing;

impl App for Failing {
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
        if ctx.clock == 3 {
            return Err(RunError::App("broken at clock 3".into()));
        }
        ctx.client.inc("c", &[(0, 0, 1.0)])?;
        Ok(Vec::new())
    }
    fn objective(&self, model: &ModelSnapshot) -> f64 {
        model.flat("c")[0]
    }
}

#[test]
fn a_failing_run_leaves_a_partial_series() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Settings::defaults(AppKind::Dml);
    s.workers = 1;
    s.clocks = 10;
    let err = run_arm(&s, Arc::new(Failing), "sha256:none", dir.path(), "broken").unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let csv = dir.path().join("broken.csv");
    assert!(!csv.exists());
    let text = std::fs::read_to_string(partial_path(&csv)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER.join(","));
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines[3].starts_with("2,"));
    assert!(dir.path().join("broken.manifest").exists());
}

fn quality_problem() -> mlps_core::lasso::LassoProblem {
    gen_lasso(&SyntheticLassoSpec {
        n: 200,
        d: 50,
        sparsity: 8,
        block_size: 5,
        block_corr: 0.7,
        noise_sd: 0.1,
        lambda: 0.05,
        seed: 12,
    })
    .unwrap()
    .problem
}

#[test]
fn parallel_lasso_reaches_the_sequential_solution() {
    let problem = quality_problem();
    let oracle = cyclic_coordinate_descent(&problem, 20_000, 1e-15);
    let app = Arc::new(LassoApp::new(problem.clone(), 4));
    for schedule in [ScheduleKind::Srrp, ScheduleKind::Priority] {
        let cfg = RunConfig {
            workers: 4,
            shards: 2,
            schedule,
            scheduler: SchedulerParams {
                theta: 0.3,
                ..SchedulerParams::default()
            },
            stop: StopRule {
                max_clocks: 4000,
                ..StopRule::default()
            },
            ..RunConfig::default()
        };
        let report = run(app.clone(), cfg).unwrap();
        let beta = app.beta(&report.final_model);
        let f = report.final_objective();
        assert!(
            (f - oracle.objective()).abs() <= 1e-6 * oracle.objective(),
            "{f} vs {}",
            oracle.objective()
        );
        assert!(fixed_point_violation(&problem, &beta).unwrap() <= 1e-6);
    }
}

#[test]
fn repeated_runs_are_identical() {
    let app = Arc::new(LassoApp::new(quality_problem(), 3));
    let strip = |m: Vec<MetricsRecord>| -> Vec<MetricsRecord> {
        m.into_iter().map(|r| MetricsRecord { wall_ms: 0, ..r }).collect()
    };
    let go = |mode| {
        let cfg = RunConfig {
            workers: 3,
            shards: 2,
            mode,
            seed: 77,
            schedule: ScheduleKind::Priority,
            diagnostics: true,
            stop: StopRule {
                max_clocks: 60,
                ..StopRule::default()
            },
            ..RunConfig::default()
        };
        strip(run(app.clone(), cfg).unwrap().metrics)
    };
    let a = go(Mode::Dist);
    assert_eq!(a, go(Mode::Dist));
    assert_eq!(a, go(Mode::InProc));
}
