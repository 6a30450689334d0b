//! Command-line plumbing: configuration, data ingestion and generation,
//! metrics output and the experiment suites.

pub mod config;
pub mod conformance;
pub mod experiments;
pub mod gen;
pub mod ingest;
pub mod output;

use std::path::Path;
use std::sync::Arc;

use mlps_core::dml::DmlProblem;
use mlps_core::lasso::LassoProblem;

use crate::apps::dml::DmlApp;
use crate::apps::lasso::LassoApp;
use crate::runtime::{App, RunError, RunReport};
use config::{AppKind, ConfigError, Settings};
use gen::{gen_dml, gen_lasso, SyntheticDmlSpec, SyntheticLassoSpec};
use ingest::{lasso_from_rows, write_pairs, Scaling};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error("conformance failed: {0}")]
    Conformance(String),
    #[error("io: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Run(_) | HarnessError::Io(_) => 3,
            HarnessError::Conformance(_) => 4,
        }
    }
}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<ingest::IngestError> for HarnessError {
    fn from(e: ingest::IngestError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<RunError> for HarnessError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(m) => HarnessError::Config(m),
            other => HarnessError::Run(other.to_string()),
        }
    }
}

pub struct LassoInstance {
    pub problem: LassoProblem,
    /// Planted coefficients for generated instances.
    pub beta_star: Option<Vec<f64>>,
    /// Scale factors for ingested instances.
    pub scaling: Option<Scaling>,
    pub input_hash: String,
}

pub struct DmlInstance {
    pub problem: DmlProblem,
    pub input_hash: String,
}

pub fn lasso_spec(s: &Settings) -> SyntheticLassoSpec {
    SyntheticLassoSpec {
        n: s.n,
        d: s.d,
        sparsity: s.sparsity,
        block_size: s.block_size,
        block_corr: s.block_corr,
        noise_sd: s.noise_sd,
        lambda: s.lambda,
        seed: s.data_seed,
    }
}

pub fn dml_spec(s: &Settings) -> SyntheticDmlSpec {
    SyntheticDmlSpec {
        dim: s.dim,
        rank: s.rank,
        pairs: s.num_pairs,
        lambda: s.lambda,
        seed: s.data_seed,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, HarnessError> {
    std::fs::read(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn check_hash(s: &Settings, actual: &str) -> Result<(), HarnessError> {
    match &s.input_hash {
        Some(want) if want != actual => Err(HarnessError::Config(format!(
            "input hash {actual} does not match the recorded {want}"
        ))),
        _ => Ok(()),
    }
}

/// Hash of a Lasso instance's numbers, used when no input file exists.
pub fn lasso_content(problem: &LassoProblem) -> Vec<u8> {
    let x = problem.x();
    let mut bytes = Vec::with_capacity(8 * (x.as_column_major().len() + problem.y().len()) + 16);
    bytes.extend((x.samples() as u64).to_le_bytes());
    bytes.extend((x.features() as u64).to_le_bytes());
    for v in x.as_column_major().iter().chain(problem.y()) {
        bytes.extend(v.to_le_bytes());
    }
    bytes
}

/// Reads `data` when set, otherwise generates from the synthetic spec.
pub fn load_lasso(s: &Settings) -> Result<LassoInstance, HarnessError> {
    let inst = match &s.data {
        Some(path) => {
            let bytes = read_bytes(path)?;
            let rows = ingest::read_dense_csv(bytes.as_slice(), s.header)?;
            let (problem, scaling) = lasso_from_rows(&rows, s.lambda)?;
            LassoInstance {
                problem,
                beta_star: None,
                scaling: Some(scaling),
                input_hash: output::content_hash(&bytes),
            }
        }
        None => {
            let g = gen_lasso(&lasso_spec(s)).map_err(HarnessError::Config)?;
            LassoInstance {
                input_hash: output::content_hash(&lasso_content(&g.problem)),
                problem: g.problem,
                beta_star: Some(g.beta_star),
                scaling: None,
            }
        }
    };
    check_hash(s, &inst.input_hash)?;
    Ok(inst)
}

/// Reads `pairs` when set, otherwise generates.
pub fn load_dml(s: &Settings) -> Result<DmlInstance, HarnessError> {
    let inst = match &s.pairs {
        Some(path) => {
            let bytes = read_bytes(path)?;
            let set = ingest::read_pairs(bytes.as_slice(), None)?;
            let problem = DmlProblem::new(set.dim, s.rank, set.similar, set.dissimilar, s.lambda)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            DmlInstance {
                problem,
                input_hash: output::content_hash(&bytes),
            }
        }
        None => {
            let problem = gen_dml(&dml_spec(s)).map_err(HarnessError::Config)?;
            let mut text = Vec::new();
            write_pairs(&mut text, problem.similar(), problem.dissimilar())?;
            DmlInstance {
                problem,
                input_hash: output::content_hash(&text),
            }
        }
    };
    check_hash(s, &inst.input_hash)?;
    Ok(inst)
}

/// Loads the configured app and runs it once into `dir`, writing
/// `<name>.csv` and `<name>.manifest`.
pub fn run_configured(s: &Settings, dir: &Path, name: &str) -> Result<RunReport, HarnessError> {
    match s.app {
        AppKind::Lasso => {
            let inst = load_lasso(s)?;
            let app = Arc::new(LassoApp::new(inst.problem, s.workers));
            run_arm(s, app, &inst.input_hash, dir, name)
        }
        AppKind::Dml => {
            let inst = load_dml(s)?;
            let app = Arc::new(
                DmlApp::new(inst.problem, s.workers, s.batch, s.step)
                    .map_err(HarnessError::from)?,
            );
            run_arm(s, app, &inst.input_hash, dir, name)
        }
    }
}

/// Runs one arm. The manifest is written first; metrics go to
/// `<name>.csv`, or to `<name>.csv.partial` if the run fails.
pub fn run_arm<A: App>(
    s: &Settings,
    app: Arc<A>,
    input_hash: &str,
    dir: &Path,
    name: &str,
) -> Result<RunReport, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = s.clone();
    manifest.input_hash = Some(input_hash.to_string());
    output::write_manifest(&dir.join(format!("{name}.manifest")), &manifest)?;
    let handle = crate::runtime::start(app, s.run_config())?;
    while !handle.is_finished() {
        std::thread::sleep(std::time::Duration::from_millis(5));
    }
    let so_far = handle.metrics();
    let csv = dir.join(format!("{name}.csv"));
    match handle.join() {
        Ok(report) => {
            output::write_metrics(&csv, &report.metrics)?;
            Ok(report)
        }
        Err(e) => {
            output::write_metrics(&output::partial_path(&csv), &so_far)?;
            Err(e.into())
        }
    }
}
