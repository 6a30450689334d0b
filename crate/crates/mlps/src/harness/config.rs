//! Flat `key = value` configuration with `#` comments. Command-line flags
//! override file values and use the same names.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use mlps_core::schedule::PriorityForm;

use crate::runtime::{Mode, RunConfig, ScheduleKind, SchedulerParams, StopRule};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key}: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Io(String),
}

/// Raw key/value pairs, later entries winning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected key = value, found {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    msg: format!("bad key {k:?}"),
                });
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppKind {
    Lasso,
    Dml,
}

impl FromStr for AppKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lasso" => Ok(AppKind::Lasso),
            "dml" => Ok(AppKind::Dml),
            other => Err(format!("unknown app {other:?} (lasso|dml)")),
        }
    }
}

/// Everything a run or experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub app: AppKind,
    pub workers: usize,
    pub staleness: u64,
    pub seed: u64,
    pub mode: Mode,
    pub shards: usize,
    pub out: PathBuf,
    pub clocks: u64,
    pub tol: Option<f64>,
    pub window: usize,
    pub stride: u64,
    pub partial_timeout_ms: u64,
    pub diagnostics: bool,
    pub schedule: ScheduleKind,
    pub theta: f64,
    pub q: usize,
    pub eta: f64,
    pub priority: PriorityForm,
    pub bootstrap: bool,
    pub lambda: f64,
    /// Lasso: dense CSV with `y` in the last column.
    pub data: Option<PathBuf>,
    pub header: bool,
    pub n: usize,
    pub d: usize,
    pub sparsity: usize,
    pub block_size: usize,
    pub block_corr: f64,
    pub noise_sd: f64,
    /// Seed for generated instances, separate from the run seed.
    pub data_seed: u64,
    /// DML: pair file.
    pub pairs: Option<PathBuf>,
    pub dim: usize,
    pub rank: usize,
    pub num_pairs: usize,
    pub batch: usize,
    /// DML step-size scale `eta0`.
    pub step: f64,
    /// Thresholds swept by the diagnostics experiment.
    pub thetas: Vec<f64>,
    /// Content hash the loaded input must match, as recorded in manifests.
    pub input_hash: Option<String>,
}

impl Settings {
    pub fn defaults(app: AppKind) -> Self {
        let lasso = app == AppKind::Lasso;
        Self {
            app,
            workers: 4,
            staleness: 0,
            seed: 0,
            mode: Mode::InProc,
            shards: 2,
            out: PathBuf::from("out"),
            clocks: if lasso { 200 } else { 100 },
            tol: None,
            window: 10,
            stride: 1,
            partial_timeout_ms: 60_000,
            diagnostics: false,
            schedule: if lasso { ScheduleKind::Priority } else { ScheduleKind::Empty },
            theta: 0.1,
            q: 0,
            eta: 1e-6,
            priority: PriorityForm::Change,
            bootstrap: true,
            lambda: if lasso { 0.1 } else { 1.0 },
            data: None,
            header: false,
            n: 1000,
            d: 500,
            sparsity: 50,
            block_size: 10,
            block_corr: 0.9,
            noise_sd: 0.1,
            data_seed: 0,
            pairs: None,
            dim: 32,
            rank: 16,
            num_pairs: 5000,
            batch: 16,
            step: 0.1,
            thetas: vec![0.1, 0.3, 0.7],
            input_hash: None,
        }
    }

    /// Defaults for the app named by `app` (Lasso when absent), then every
    /// other key.
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        let app = match cfg.get("app") {
            Some(v) => v.parse().map_err(|msg| ConfigError::Value {
                key: "app".into(),
                msg,
            })?,
            None => AppKind::Lasso,
        };
        let mut s = Self::defaults(app);
        for (k, v) in cfg.iter() {
            s.apply(k, v)?;
        }
        Ok(s)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| ConfigError::Value {
                key: key.to_string(),
                msg: format!("{v:?}: {e}"),
            })
        }
        fn path(v: &str) -> Option<PathBuf> {
            (!v.is_empty()).then(|| PathBuf::from(v))
        }
        match key {
            "app" => self.app = p(key, v)?,
            "workers" => self.workers = p(key, v)?,
            "staleness" => self.staleness = p(key, v)?,
            "seed" => self.seed = p(key, v)?,
            "mode" => self.mode = p(key, v)?,
            "shards" => self.shards = p(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "clocks" => self.clocks = p(key, v)?,
            "tol" => self.tol = if v.is_empty() { None } else { Some(p(key, v)?) },
            "window" => self.window = p(key, v)?,
            "stride" => self.stride = p(key, v)?,
            "partial_timeout_ms" => self.partial_timeout_ms = p(key, v)?,
            "diagnostics" => self.diagnostics = p(key, v)?,
            "schedule" => self.schedule = p(key, v)?,
            "theta" => self.theta = p(key, v)?,
            "q" => self.q = p(key, v)?,
            "eta" => self.eta = p(key, v)?,
            "priority" => {
                self.priority = match v {
                    "change" => PriorityForm::Change,
                    "magnitude" => PriorityForm::Magnitude,
                    other => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            msg: format!("{other:?} (change|magnitude)"),
                        })
                    }
                }
            }
            "bootstrap" => self.bootstrap = p(key, v)?,
            "lambda" => self.lambda = p(key, v)?,
            "data" => self.data = path(v),
            "header" => self.header = p(key, v)?,
            "n" => self.n = p(key, v)?,
            "d" => self.d = p(key, v)?,
            "sparsity" => self.sparsity = p(key, v)?,
            "block_size" => self.block_size = p(key, v)?,
            "block_corr" => self.block_corr = p(key, v)?,
            "noise_sd" => self.noise_sd = p(key, v)?,
            "data_seed" => self.data_seed = p(key, v)?,
            "pairs" => self.pairs = path(v),
            "dim" => self.dim = p(key, v)?,
            "rank" => self.rank = p(key, v)?,
            "num_pairs" => self.num_pairs = p(key, v)?,
            "batch" => self.batch = p(key, v)?,
            "step" => self.step = p(key, v)?,
            "thetas" => {
                self.thetas = v
                    .split(',')
                    .map(|t| p::<f64>(key, t.trim()))
                    .collect::<Result<_, _>>()?
            }
            "input_hash" => self.input_hash = (!v.is_empty()).then(|| v.to_string()),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` overrides in order.
    pub fn override_with(&mut self, pairs: &[(String, String)]) -> Result<(), ConfigError> {
        for (k, v) in pairs {
            self.apply(k, v)?;
        }
        Ok(())
    }

    /// The complete configuration as `key = value` text, readable by
    /// [`Config::parse`].
    pub fn to_text(&self) -> String {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let schedule = match &self.schedule {
            ScheduleKind::Empty => "empty",
            ScheduleKind::Fixed(_) => "fixed",
            ScheduleKind::Random => "random",
            ScheduleKind::Srrp => "srrp",
            ScheduleKind::Priority => "priority",
            ScheduleKind::Ideal => "ideal",
        };
        let mode = match self.mode {
            Mode::InProc => "inproc",
            Mode::Loopback => "loopback",
            Mode::Dist => "dist",
        };
        let rows: Vec<(&str, String)> = vec![
            ("app", if self.app == AppKind::Lasso { "lasso" } else { "dml" }.into()),
            ("workers", self.workers.to_string()),
            ("staleness", self.staleness.to_string()),
            ("seed", self.seed.to_string()),
            ("mode", mode.into()),
            ("shards", self.shards.to_string()),
            ("out", self.out.display().to_string()),
            ("clocks", self.clocks.to_string()),
            ("tol", self.tol.map_or(String::new(), |t| format!("{t:?}"))),
            ("window", self.window.to_string()),
            ("stride", self.stride.to_string()),
            ("partial_timeout_ms", self.partial_timeout_ms.to_string()),
            ("diagnostics", self.diagnostics.to_string()),
            ("schedule", schedule.into()),
            ("theta", format!("{:?}", self.theta)),
            ("q", self.q.to_string()),
            ("eta", format!("{:?}", self.eta)),
            (
                "priority",
                if self.priority == PriorityForm::Change { "change" } else { "magnitude" }.into(),
            ),
            ("bootstrap", self.bootstrap.to_string()),
            ("lambda", format!("{:?}", self.lambda)),
            ("data", opt_path(&self.data)),
            ("header", self.header.to_string()),
            ("n", self.n.to_string()),
            ("d", self.d.to_string()),
            ("sparsity", self.sparsity.to_string()),
            ("block_size", self.block_size.to_string()),
            ("block_corr", format!("{:?}", self.block_corr)),
            ("noise_sd", format!("{:?}", self.noise_sd)),
            ("data_seed", self.data_seed.to_string()),
            ("pairs", opt_path(&self.pairs)),
            ("dim", self.dim.to_string()),
            ("rank", self.rank.to_string()),
            ("num_pairs", self.num_pairs.to_string()),
            ("batch", self.batch.to_string()),
            ("step", format!("{:?}", self.step)),
            (
                "thetas",
                self.thetas.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(","),
            ),
            ("input_hash", self.input_hash.clone().unwrap_or_default()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            workers: self.workers,
            staleness: self.staleness,
            seed: self.seed,
            mode: self.mode,
            shards: self.shards,
            schedule: self.schedule.clone(),
            scheduler: SchedulerParams {
                candidates: self.q,
                theta: self.theta,
                eta: self.eta,
                form: self.priority,
                bootstrap: self.bootstrap,
            },
            stop: StopRule {
                max_clocks: self.clocks,
                tol: self.tol,
                window: self.window,
            },
            objective_stride: self.stride,
            partial_timeout: Duration::from_millis(self.partial_timeout_ms),
            diagnostics: self.diagnostics,
            ..RunConfig::default()
        }
    }
}
