//! Experiment suites. Each writes one metrics CSV and manifest per arm, a
//! summary table and an experiment manifest into the output directory.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use mlps_core::lasso::cyclic_coordinate_descent;
use mlps_core::schedule::{
    compute_epsilon, count_compatible_pairs, masked_spectral_radius, CorrelationIndex,
    PowerIterationOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{AppKind, Settings};
use super::conformance::run_suite;
use super::output::write_table;
use super::{load_dml, load_lasso, run_arm, HarnessError};
use crate::apps::dml::DmlApp;
use crate::apps::lasso::LassoApp;
use crate::runtime::{RunReport, ScheduleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    LassoSchedCompare,
    DmlStaleness,
    SspSemantics,
    TheoryDiagnostics,
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lasso-sched-compare" => Ok(Self::LassoSchedCompare),
            "dml-staleness" => Ok(Self::DmlStaleness),
            "ssp-semantics" => Ok(Self::SspSemantics),
            "theory-diagnostics" => Ok(Self::TheoryDiagnostics),
            other => Err(format!(
                "unknown experiment {other:?} \
                 (lasso-sched-compare|dml-staleness|ssp-semantics|theory-diagnostics)"
            )),
        }
    }
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::LassoSchedCompare => "lasso-sched-compare",
            Self::DmlStaleness => "dml-staleness",
            Self::SspSemantics => "ssp-semantics",
            Self::TheoryDiagnostics => "theory-diagnostics",
        }
    }
}

pub struct Arm {
    pub name: String,
    pub report: RunReport,
}

/// Runs `kind` into `s.out`. Lines describing each arm or scenario are
/// returned for printing.
pub fn run_experiment(kind: ExperimentKind, s: &Settings) -> Result<Vec<String>, HarnessError> {
    let dir = s.out.as_path();
    std::fs::create_dir_all(dir)?;
    match kind {
        ExperimentKind::LassoSchedCompare => lasso_sched_compare(s, dir),
        ExperimentKind::DmlStaleness => dml_staleness(s, dir),
        ExperimentKind::SspSemantics => ssp_semantics(dir),
        ExperimentKind::TheoryDiagnostics => theory_diagnostics(s, dir),
    }
}

fn experiment_manifest(
    dir: &Path,
    kind: ExperimentKind,
    s: &Settings,
    arms: &[&str],
    input_hash: Option<&str>,
) -> Result<(), HarnessError> {
    let mut text = String::new();
    let _ = writeln!(text, "# experiment = {}", kind.name());
    let _ = writeln!(text, "# arms = {}", arms.join(","));
    let _ = writeln!(text, "# each arm has <arm>.manifest; rerun one with `mlps run --config`");
    let mut base = s.clone();
    base.input_hash = input_hash.map(str::to_string);
    text.push_str(&base.to_text());
    std::fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

/// First clock count at which the objective is within `target`.
pub fn clocks_to_reach(report: &RunReport, target: f64) -> Option<u64> {
    report
        .metrics
        .iter()
        .find(|m| m.objective <= target)
        .map(|m| m.clock + 1)
}

pub const SCHED_ARMS: [(&str, ScheduleKind); 3] = [
    ("random", ScheduleKind::Random),
    ("srrp", ScheduleKind::Srrp),
    ("srrp-priority", ScheduleKind::Priority),
];

fn lasso_sched_compare(s: &Settings, dir: &Path) -> Result<Vec<String>, HarnessError> {
    if s.app != AppKind::Lasso {
        return Err(HarnessError::Config("lasso-sched-compare needs app = lasso".into()));
    }
    let inst = load_lasso(s)?;
    let names: Vec<&str> = SCHED_ARMS.iter().map(|(n, _)| *n).collect();
    experiment_manifest(dir, ExperimentKind::LassoSchedCompare, s, &names, Some(&inst.input_hash))?;
    let optimum = cyclic_coordinate_descent(&inst.problem, 10_000, 1e-13).objective();
    let target = optimum * 1.01;
    let app = Arc::new(LassoApp::new(inst.problem, s.workers));
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (name, kind) in SCHED_ARMS {
        let mut arm = s.clone();
        arm.schedule = kind;
        let report = run_arm(&arm, app.clone(), &inst.input_hash, dir, name)?;
        let reached = clocks_to_reach(&report, target);
        let fin = report.final_objective();
        lines.push(format!(
            "{name}: final objective {fin:.6}, clocks to optimum+1% {}",
            reached.map_or("never".into(), |c| c.to_string())
        ));
        rows.push(vec![
            name.to_string(),
            reached.map_or(String::new(), |c| c.to_string()),
            format!("{fin:?}"),
            format!("{optimum:?}"),
        ]);
    }
    write_table(
        &dir.join("summary.csv"),
        &["arm", "clocks_to_target", "final_objective", "oracle_objective"],
        &rows,
    )?;
    Ok(lines)
}

pub const STALENESS_LEVELS: [u64; 4] = [0, 1, 2, 3];

fn dml_staleness(s: &Settings, dir: &Path) -> Result<Vec<String>, HarnessError> {
    if s.app != AppKind::Dml {
        return Err(HarnessError::Config("dml-staleness needs app = dml".into()));
    }
    let inst = load_dml(s)?;
    let names: Vec<String> = STALENESS_LEVELS.iter().map(|l| format!("s{l}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    experiment_manifest(dir, ExperimentKind::DmlStaleness, s, &refs, Some(&inst.input_hash))?;
    let app = Arc::new(
        DmlApp::new(inst.problem, s.workers, s.batch, s.step).map_err(HarnessError::from)?,
    );
    let mut results = Vec::new();
    for (&level, name) in STALENESS_LEVELS.iter().zip(&names) {
        let mut arm = s.clone();
        arm.staleness = level;
        let report = run_arm(&arm, app.clone(), &inst.input_hash, dir, name)?;
        results.push((name.clone(), level, report));
    }
    let base = results[0].2.final_objective();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (name, level, report) in &results {
        let fin = report.final_objective();
        let gap = (fin - base).abs() / base.abs().max(f64::MIN_POSITIVE);
        let (mean, var) = report.observe_staleness();
        lines.push(format!(
            "{name}: final objective {fin:.6} ({:.3}% from s=0), staleness mean {mean:.3} var {var:.3}",
            100.0 * gap
        ));
        rows.push(vec![
            name.clone(),
            level.to_string(),
            format!("{fin:?}"),
            format!("{gap:?}"),
            format!("{mean:?}"),
            format!("{var:?}"),
        ]);
    }
    write_table(
        &dir.join("summary.csv"),
        &["arm", "staleness", "final_objective", "rel_gap", "staleness_mean", "staleness_var"],
        &rows,
    )?;
    Ok(lines)
}

fn ssp_semantics(dir: &Path) -> Result<Vec<String>, HarnessError> {
    let outcomes = run_suite();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for o in &outcomes {
        lines.push(match &o.failure {
            None => format!("PASS {} (reads {}, blocked {})", o.name, o.reads, o.blocked),
            Some(e) => format!("FAIL {}: {e}", o.name),
        });
        rows.push(vec![
            o.name.clone(),
            o.workers.to_string(),
            o.staleness.to_string(),
            o.clocks.to_string(),
            o.reads.to_string(),
            o.blocked.to_string(),
            o.passed().to_string(),
            o.failure.clone().unwrap_or_default(),
        ]);
    }
    write_table(
        &dir.join("ssp-semantics.csv"),
        &["scenario", "workers", "staleness", "clocks", "reads", "blocked", "passed", "detail"],
        &rows,
    )?;
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    if failed > 0 {
        for l in &lines {
            println!("{l}");
        }
        return Err(HarnessError::Conformance(format!(
            "{failed} of {} scenarios failed",
            outcomes.len()
        )));
    }
    Ok(lines)
}

/// One row of the diagnostics table.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub theta: f64,
    pub d: usize,
    pub rho: f64,
    /// `(d - 1) theta`, the bound on `|rho - 1|`.
    pub bound: f64,
    pub pairs: f64,
    pub workers: usize,
    pub epsilon: f64,
}

/// Masked spectral radius, pair count and `epsilon` for a fixed degree of
/// `workers`, per threshold.
pub fn diagnostics(
    corr: &CorrelationIndex,
    thetas: &[f64],
    workers: usize,
    seed: u64,
) -> Result<Vec<DiagnosticRow>, HarnessError> {
    let d = corr.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    thetas
        .iter()
        .map(|&theta| {
            let rho = masked_spectral_radius(corr, theta, &PowerIterationOptions::default())
                .map_err(|e| HarnessError::Run(e.to_string()))?;
            let pairs = count_compatible_pairs(corr, theta, &mut rng);
            let p = workers as f64;
            Ok(DiagnosticRow {
                theta,
                d,
                rho,
                bound: (d as f64 - 1.0) * theta,
                pairs,
                workers,
                epsilon: compute_epsilon(d, p, p * p, rho, pairs.max(1.0)),
            })
        })
        .collect()
}

fn theory_diagnostics(s: &Settings, dir: &Path) -> Result<Vec<String>, HarnessError> {
    if s.app != AppKind::Lasso {
        return Err(HarnessError::Config("theory-diagnostics needs app = lasso".into()));
    }
    let inst = load_lasso(s)?;
    experiment_manifest(dir, ExperimentKind::TheoryDiagnostics, s, &[], Some(&inst.input_hash))?;
    let x = inst.problem.x();
    let corr = CorrelationIndex::from_columns(x.samples(), x.as_column_major().to_vec())
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let table = diagnostics(&corr, &s.thetas, s.workers, s.seed)?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for r in &table {
        let within = (r.rho - 1.0).abs() <= r.bound;
        lines.push(format!(
            "theta {}: rho {:.6}, |rho-1| <= {:.3}: {within}, pairs {}, epsilon(P={}) {:.6}",
            r.theta, r.rho, r.bound, r.pairs, r.workers, r.epsilon
        ));
        rows.push(vec![
            format!("{:?}", r.theta),
            r.d.to_string(),
            format!("{:?}", r.rho),
            format!("{:?}", r.bound),
            within.to_string(),
            format!("{:?}", r.pairs),
            r.workers.to_string(),
            format!("{:?}", r.epsilon),
        ]);
    }
    write_table(
        &dir.join("diagnostics.csv"),
        &["theta", "d", "rho", "bound", "within_bound", "pairs", "workers", "epsilon"],
        &rows,
    )?;
    Ok(lines)
}
