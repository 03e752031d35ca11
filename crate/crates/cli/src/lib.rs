//! Benchmark harness for the stochastic interior-point solvers: experiment
//! configuration, trace files and the `solve`, `check` and `bench` commands.

pub mod bench;
pub mod config;
pub mod trace_io;

use std::io;
use std::path::{Path, PathBuf};

use sipm_core::audit::{self, AuditConfig, SuiteReport};
use sipm_core::problems::{ConicProblem, ProblemError};
use sipm_core::solver::{self, RunOptions, SolverError, Trace};

pub use config::{build_problem, DataSource, ExperimentConfig, ProblemKind, SynthSpec, VariantArg};
pub use trace_io::{final_metrics, Summary};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SIPM_OUT_DIR";

#[derive(Debug, Clone, thiserror::Error)]
pub enum CliError {
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("cannot read data: {0}")]
    Data(String),
    #[error("infeasible starting point: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Problem(ProblemError::InfeasibleStart(m)) => CliError::Infeasible(m),
            SolverError::Problem(ProblemError::Data(m)) => CliError::Data(m),
            SolverError::Config(m) => CliError::Usage(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl CliError {
    /// Process exit status. Argument parsing failures caught by clap exit
    /// with 2 as well.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Numerical(_) => 5,
            CliError::Output(_) => 6,
        }
    }
}

/// Runs one configured experiment on an already built problem.
pub fn run_on(problem: &ConicProblem, cfg: &ExperimentConfig) -> Result<(Trace, Summary), CliError> {
    cfg.validate()?;
    let schedule = cfg.schedule(problem)?;
    let options = RunOptions {
        record_every: cfg.record_every,
        early_stop: cfg.early_stop,
        wall_clock: cfg.wall_clock,
    };
    let trace = solver::run(problem, schedule, cfg.budget, cfg.seed, options)?;
    let summary = trace_io::summarize(
        &trace,
        &trace_io::RunMeta {
            problem: cfg.problem.name(),
            variant: cfg.variant.name(),
            seed: cfg.seed,
            data_seed: cfg.effective_data_seed(),
            s_eta: cfg.s_eta,
            epsilon: cfg.epsilon,
        },
    )?;
    Ok((trace, summary))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Trace, Summary), CliError> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    run_on(&problem, cfg)
}

/// Default trace file name for a run.
pub fn trace_file_name(cfg: &ExperimentConfig) -> String {
    format!("{}-{}-seed{}.jsonl", cfg.problem, cfg.variant, cfg.seed)
}

/// Output directory from [`OUT_DIR_ENV`], else the working directory.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// The `solve` command: run and write the trace to `out`.
pub fn solve(cfg: &ExperimentConfig, out: &Path) -> Result<Summary, CliError> {
    let (trace, summary) = run_experiment(cfg)?;
    trace_io::write_trace_file(out, &trace.records, &summary)?;
    Ok(summary)
}

/// The `check` command. `suite` of `None` runs every suite.
pub fn check(suite: Option<&str>, cfg: &AuditConfig) -> Result<Vec<SuiteReport>, CliError> {
    let names: Vec<&str> = match suite {
        None | Some("all") => audit::SUITES.to_vec(),
        Some(s) => vec![s],
    };
    names
        .into_iter()
        .map(|name| {
            audit::run_suite(name, cfg).ok_or_else(|| {
                CliError::Usage(format!("unknown suite {name:?}; expected all or one of {}", audit::SUITES.join(", ")))
            })
        })
        .collect()
}
