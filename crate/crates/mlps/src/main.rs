use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mlps::harness::config::{AppKind, Config, Settings};
use mlps::harness::experiments::{run_experiment, ExperimentKind};
use mlps::harness::gen::{gen_dml, gen_lasso};
use mlps::harness::ingest::{write_dense_csv, write_pairs};
use mlps::harness::output::{content_hash, write_table};
use mlps::harness::{dml_spec, lasso_content, lasso_spec, run_configured, HarnessError};

#[derive(Parser)]
#[command(name = "mlps", version, about = "Stale-synchronous parameter server with a model-parallel scheduler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one app and write metrics.csv and run.manifest.
    Run(Common),
    /// Generate a synthetic instance.
    Gen(Common),
    /// Run an experiment suite.
    Experiment {
        kind: Kind,
        #[command(flatten)]
        common: Common,
    },
    /// Run the SSP conformance suite.
    Conformance,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    LassoSchedCompare,
    DmlStaleness,
    SspSemantics,
    TheoryDiagnostics,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::LassoSchedCompare => ExperimentKind::LassoSchedCompare,
            Kind::DmlStaleness => ExperimentKind::DmlStaleness,
            Kind::SspSemantics => ExperimentKind::SspSemantics,
            Kind::TheoryDiagnostics => ExperimentKind::TheoryDiagnostics,
        }
    }
}

/// Flags mirror config keys and override the config file.
#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// lasso or dml
    #[arg(long)]
    app: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    staleness: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// inproc, loopback or dist
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    /// Candidates proposed per clock (0 means twice the workers).
    #[arg(long)]
    q: Option<String>,
    /// Priority floor.
    #[arg(long)]
    eta: Option<String>,
    /// DML step-size scale.
    #[arg(long)]
    step: Option<String>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn settings(&self) -> Result<Settings, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        let mut overrides: Vec<(String, String)> = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("--set expects key=value, got {kv:?}")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let flags = [
            ("workers", &self.workers),
            ("staleness", &self.staleness),
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("out", &self.out),
            ("lambda", &self.lambda),
            ("theta", &self.theta),
            ("q", &self.q),
            ("eta", &self.eta),
            ("step", &self.step),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                overrides.push((k.to_string(), v.clone()));
            }
        }
        // the app decides defaults, so it is applied before anything else
        if let Some(app) = &self.app {
            cfg.set("app", app.clone());
        }
        if let Some((_, app)) = overrides.iter().find(|(k, _)| k == "app") {
            cfg.set("app", app.clone());
        }
        let mut s = Settings::from_config(&cfg)?;
        s.override_with(&overrides)?;
        Ok(s)
    }
}

fn run(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run(common) => {
            let s = common.settings()?;
            let report = run_configured(&s, &s.out, "run")?;
            let metrics_path = s.out.join("metrics.csv");
            std::fs::rename(s.out.join("run.csv"), &metrics_path)?;
            println!(
                "{} clocks, objective {:.6} -> {:.6}, staleness mean {:.3}; wrote {}",
                report.metrics.len(),
                report.initial_objective,
                report.final_objective(),
                report.staleness.mean(),
                metrics_path.display()
            );
            Ok(())
        }
        Command::Gen(common) => {
            let s = common.settings()?;
            std::fs::create_dir_all(&s.out)?;
            match s.app {
                AppKind::Lasso => {
                    let g = gen_lasso(&lasso_spec(&s)).map_err(HarnessError::Config)?;
                    let path = s.out.join("lasso.csv");
                    let file = std::fs::File::create(&path)?;
                    write_dense_csv(file, &g.problem).map_err(|e| HarnessError::Io(e.to_string()))?;
                    let rows: Vec<Vec<String>> = g
                        .beta_star
                        .iter()
                        .enumerate()
                        .map(|(j, b)| vec![j.to_string(), format!("{b:?}")])
                        .collect();
                    write_table(&s.out.join("beta_star.csv"), &["index", "beta"], &rows)?;
                    let rho = g.rho(s.theta);
                    println!(
                        "wrote {} ({}x{}), hash {}; masked spectral radius at theta {}: {}",
                        path.display(),
                        s.n,
                        s.d,
                        content_hash(&lasso_content(&g.problem)),
                        s.theta,
                        rho.map_or("unavailable".into(), |r| format!("{r:.6}"))
                    );
                }
                AppKind::Dml => {
                    let p = gen_dml(&dml_spec(&s)).map_err(HarnessError::Config)?;
                    let mut text = Vec::new();
                    write_pairs(&mut text, p.similar(), p.dissimilar())?;
                    let path = s.out.join("pairs.txt");
                    std::fs::write(&path, &text)?;
                    println!("wrote {}, hash {}", path.display(), content_hash(&text));
                }
            }
            Ok(())
        }
        Command::Experiment { kind, common } => {
            let s = common.settings()?;
            for line in run_experiment(kind.into(), &s)? {
                println!("{line}");
            }
            Ok(())
        }
        Command::Conformance => {
            let outcomes = mlps::harness::conformance::run_suite();
            let mut failed = 0;
            for o in &outcomes {
                match &o.failure {
                    None => println!("PASS {}", o.name),
                    Some(e) => {
                        failed += 1;
                        println!("FAIL {}: {e}", o.name)
                    }
                }
            }
            if failed > 0 {
                return Err(HarnessError::Conformance(format!(
                    "{failed} of {} scenarios failed",
                    outcomes.len()
                )));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PETUUM_LITE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
