use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sipm_bench::bench::{self, Grid};
use sipm_bench::config::{BatchOptions, ModelParams};
use sipm_bench::{CliError, DataSource, ExperimentConfig, ProblemKind, SynthSpec, VariantArg};
use sipm_core::audit::AuditConfig;
use sipm_core::problems::cluster::ClusterParams;
use sipm_core::problems::robust::RobustParams;
use sipm_core::solver::Budget;

#[derive(Parser)]
#[command(name = "sipm", version, about = "Stochastic interior-point methods for conic stochastic optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one variant on one problem and write its trace.
    Solve(SolveArgs),
    /// Run the numerical self-checks.
    Check(CheckArgs),
    /// Run a variant by seed grid and print a summary table.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    #[arg(long, value_enum)]
    problem: ProblemKind,
    /// Synthetic data as key=value pairs, e.g. d=10,p=2000.
    #[arg(long, conflicts_with = "data")]
    synth: Option<SynthSpec>,
    /// CSV file with the problem data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed of the synthetic data; defaults to the solver seed.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Number of clusters for cluster data read from a file.
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = RobustParams::default().lambda1)]
    lambda1: f64,
    #[arg(long, default_value_t = RobustParams::default().lambda2)]
    lambda2: f64,
    /// Violation probability of the robust chance constraint.
    #[arg(long, default_value_t = RobustParams::default().eta_prob)]
    eta_prob: f64,
    /// Multi-task regularization weight.
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = ClusterParams::default().tau)]
    tau: f64,
    #[arg(long, default_value_t = ClusterParams::default().gamma)]
    gamma: f64,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, default_value_t = 0.5)]
    s_eta: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Budget in passes over the data.
    #[arg(long, conflicts_with = "iterations")]
    epochs: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Fixed batch of me1; defaults to a tenth of the dataset.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 1)]
    batch_init: usize,
    #[arg(long, default_value_t = 1)]
    batch_inc: usize,
    /// Samples per momentum update of pm, em and rm.
    #[arg(long, default_value_t = 1)]
    momentum_batch: usize,
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Stop once the relative stationarity reaches epsilon.
    #[arg(long)]
    early_stop: bool,
    /// Record elapsed time; traces are then no longer reproducible.
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "me1")]
    variant: VariantArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace file; defaults to a name derived from the run in $SIPM_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// One of all, barrier, dikin, kkt, schedules, finite-sum.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = AuditConfig::default().kmax)]
    kmax: usize,
    #[arg(long, default_value_t = AuditConfig::default().seed)]
    seed: u64,
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb_hessian: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "me1,me+,pm,em,rm,fg")]
    variants: Vec<VariantArg>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Step scales to sweep; defaults to the single --s-eta value.
    #[arg(long, value_delimiter = ',')]
    s_etas: Vec<f64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory for the per-cell traces.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn experiment(p: &ProblemArgs, r: &RunArgs, variant: VariantArg, seed: u64) -> Result<ExperimentConfig, CliError> {
    let source = match (&p.synth, &p.data) {
        (_, Some(path)) => DataSource::File(path.clone()),
        (Some(spec), None) => DataSource::Synth(spec.clone()),
        (None, None) => DataSource::Synth(SynthSpec::default()),
    };
    let robust = RobustParams {
        lambda1: p.lambda1,
        lambda2: p.lambda2,
        eta_prob: p.eta_prob,
    };
    let cluster = ClusterParams { tau: p.tau, gamma: p.gamma };
    let mut cfg = ExperimentConfig::new(p.problem, source, variant);
    cfg.data_seed = p.data_seed;
    cfg.model = ModelParams {
        robust,
        multitask_lambda: p.lambda,
        cluster,
        clusters: p.clusters,
    };
    cfg.s_eta = r.s_eta;
    cfg.epsilon = r.epsilon;
    cfg.seed = seed;
    cfg.budget = match (r.epochs, r.iterations) {
        (_, Some(n)) => Budget::Iterations(n),
        (Some(e), None) => Budget::Epochs(e),
        (None, None) => cfg.budget,
    };
    cfg.batch = BatchOptions {
        fixed: r.batch,
        initial: r.batch_init,
        increment: r.batch_inc,
        momentum: r.momentum_batch,
    };
    cfg.record_every = r.record_every;
    cfg.early_stop = r.early_stop;
    cfg.wall_clock = r.wall_clock;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(a) => {
            let cfg = experiment(&a.problem, &a.run, a.variant, a.seed)?;
            let out = a
                .out
                .unwrap_or_else(|| sipm_bench::default_out_dir().join(sipm_bench::trace_file_name(&cfg)));
            let s = sipm_bench::solve(&cfg, &out)?;
            println!(
                "{} {} seed {}: {} iterations ({:?}), stat_rel {:.3e}, f_rel {:.6}, reported k {} -> {}",
                s.problem,
                s.variant,
                s.seed,
                s.iterations,
                s.termination,
                s.final_stat_rel,
                s.final_f_rel,
                s.reported.k,
                out.display()
            );
            Ok(())
        }
        Command::Check(a) => {
            let cfg = AuditConfig {
                seed: a.seed,
                kmax: a.kmax,
                perturb_hessian: a.perturb_hessian,
            };
            let reports = sipm_bench::check(Some(&a.suite), &cfg)?;
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                return Err(CliError::CheckFailed(format!("{failed} suite(s) failed")));
            }
            Ok(())
        }
        Command::Bench(a) => {
            let seed = a.seeds.first().copied().unwrap_or(0);
            let base = experiment(&a.problem, &a.run, VariantArg::Me1, seed)?;
            let grid = Grid {
                variants: a.variants,
                seeds: a.seeds,
                s_etas: a.s_etas,
            };
            let cells = bench::run_grid(&base, &grid, a.jobs, a.out_dir.as_deref())?;
            print!("{}", bench::table(&grid, &cells));
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            if failed > 0 {
                return Err(CliError::CheckFailed(format!("{failed} of {} cells failed", cells.len())));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sipm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
