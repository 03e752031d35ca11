//! Experiment configuration and problem construction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sipm_core::estimators::{Schedule, Variant};
use sipm_core::problems::cluster::ClusterParams;
use sipm_core::problems::robust::RobustParams;
use sipm_core::problems::{self, data, synth, ConicProblem, ProblemError};
use sipm_core::solver::Budget;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProblemKind {
    Robust,
    Multitask,
    Cluster,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Robust => "robust",
            ProblemKind::Multitask => "multitask",
            ProblemKind::Cluster => "cluster",
        }
    }

    fn synth_keys(self) -> &'static [&'static str] {
        match self {
            ProblemKind::Robust => &["d", "p", "noise", "dof", "missing"],
            ProblemKind::Multitask => &["tasks", "m", "d", "noise"],
            ProblemKind::Cluster => &["d", "k", "p", "q", "sep", "jitter"],
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, clap::ValueEnum)]
pub enum VariantArg {
    Me,
    Me1,
    #[value(name = "me+")]
    MePlus,
    Pm,
    Em,
    Rm,
    Fg,
}

impl VariantArg {
    pub const ALL: [VariantArg; 7] = [
        VariantArg::Me,
        VariantArg::Me1,
        VariantArg::MePlus,
        VariantArg::Pm,
        VariantArg::Em,
        VariantArg::Rm,
        VariantArg::Fg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantArg::Me => "me",
            VariantArg::Me1 => "me1",
            VariantArg::MePlus => "me+",
            VariantArg::Pm => "pm",
            VariantArg::Em => "em",
            VariantArg::Rm => "rm",
            VariantArg::Fg => "fg",
        }
    }
}

impl fmt::Display for VariantArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VariantArg::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// `key=value` pairs such as `d=10,p=2000`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthSpec(pub BTreeMap<String, f64>);

impl FromStr for SynthSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut map = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, found {part:?}"))?;
            let v: f64 = v.trim().parse().map_err(|_| format!("{k}: cannot parse {v:?}"))?;
            if !v.is_finite() {
                return Err(format!("{k}: value must be finite"));
            }
            map.insert(k.trim().to_string(), v);
        }
        Ok(SynthSpec(map))
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl SynthSpec {
    fn count(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.0.get(key) {
            None => Ok(default),
            Some(&v) if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(v as usize),
            Some(v) => Err(CliError::Usage(format!("{key}={v} must be a positive integer"))),
        }
    }

    fn real(&self, key: &str, default: f64) -> f64 {
        self.0.get(key).copied().unwrap_or(default)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth(SynthSpec),
    File(PathBuf),
}

/// Tuning constants of the objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub robust: RobustParams,
    pub multitask_lambda: f64,
    pub cluster: ClusterParams,
    /// Cluster count when reading stream data from a file.
    pub clusters: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            robust: RobustParams::default(),
            multitask_lambda: 0.01,
            cluster: ClusterParams::default(),
            clusters: 3,
        }
    }
}

/// How each variant forms its samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOptions {
    /// Fixed batch for `me1`; `None` uses a tenth of the dataset.
    pub fixed: Option<usize>,
    pub initial: usize,
    pub increment: usize,
    /// Samples per momentum update for `pm`, `em` and `rm`.
    pub momentum: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            fixed: None,
            initial: 1,
            increment: 1,
            momentum: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub source: DataSource,
    /// Seed of the synthetic data; defaults to the solver seed.
    pub data_seed: Option<u64>,
    pub model: ModelParams,
    pub variant: VariantArg,
    pub s_eta: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub budget: Budget,
    pub batch: BatchOptions,
    pub record_every: usize,
    pub early_stop: bool,
    pub wall_clock: bool,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemKind, source: DataSource, variant: VariantArg) -> Self {
        Self {
            problem,
            source,
            data_seed: None,
            model: ModelParams::default(),
            variant,
            s_eta: 0.5,
            epsilon: 0.01,
            seed: 0,
            budget: Budget::Epochs(100.0),
            batch: BatchOptions::default(),
            record_every: 1,
            early_stop: false,
            wall_clock: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.s_eta > 0.0 && self.s_eta < 1.0) {
            return Err(CliError::Usage(format!("--s-eta {} must lie in (0, 1)", self.s_eta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CliError::Usage(format!("--epsilon {} must lie in (0, 1)", self.epsilon)));
        }
        if self.record_every == 0 {
            return Err(CliError::Usage("--record-every must be positive".into()));
        }
        let b = &self.batch;
        if b.fixed == Some(0) || b.initial == 0 || b.momentum == 0 {
            return Err(CliError::Usage("batch sizes must be positive".into()));
        }
        match self.budget {
            Budget::Epochs(e) if !(e > 0.0 && e.is_finite()) => {
                Err(CliError::Usage(format!("--epochs {e} must be positive")))
            }
            Budget::Iterations(0) => Err(CliError::Usage("--iterations must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn effective_data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn variant(&self, n_components: usize) -> Variant {
        match self.variant {
            VariantArg::Me => Variant::ME,
            VariantArg::MePlus => Variant::Me {
                initial: self.batch.initial,
                increment: self.batch.increment,
            },
            VariantArg::Me1 => Variant::Me1 {
                batch: self.batch.fixed.unwrap_or_else(|| n_components.div_ceil(10)).max(1),
            },
            VariantArg::Pm => Variant::Pm,
            VariantArg::Em => Variant::Em,
            VariantArg::Rm => Variant::Rm,
            VariantArg::Fg => Variant::Fg,
        }
    }

    pub fn schedule(&self, problem: &ConicProblem) -> Result<Schedule, CliError> {
        let theta = problem.cone.complexity_parameter();
        Schedule::new(self.variant(problem.n_components()), self.s_eta, self.epsilon, theta)
            .and_then(|s| s.with_momentum_batch(self.batch.momentum))
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

fn problem_error(e: ProblemError) -> CliError {
    match e {
        ProblemError::InfeasibleStart(m) => CliError::Infeasible(m),
        ProblemError::Data(m) => CliError::Data(m),
        other => CliError::Numerical(other.to_string()),
    }
}

fn check_keys(kind: ProblemKind, spec: &SynthSpec) -> Result<(), CliError> {
    let allowed = kind.synth_keys();
    match spec.0.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(CliError::Usage(format!(
            "unknown --synth key {k:?} for {kind}; expected one of {}",
            allowed.join(", ")
        ))),
        None => Ok(()),
    }
}

/// Builds the benchmark problem described by `cfg`.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<ConicProblem, CliError> {
    let m = &cfg.model;
    let seed = cfg.effective_data_seed();
    let built = match (&cfg.source, cfg.problem) {
        (DataSource::Synth(spec), ProblemKind::Robust) => {
            check_keys(cfg.problem, spec)?;
            let base = synth::RegressionSpec::new(spec.count("d", 10)?, spec.count("p", 2000)?);
            let s = synth::RegressionSpec {
                noise_scale: spec.real("noise", base.noise_scale),
                noise_dof: spec.real("dof", base.noise_dof),
                missing: spec.real("missing", 0.0) != 0.0,
                ..base
            };
            synth::regression(&s, seed)
                .and_then(|r| r.into_data(m.robust))
                .and_then(|d| problems::robust_regression(&d))
        }
        (DataSource::Synth(spec), ProblemKind::Multitask) => {
            check_keys(cfg.problem, spec)?;
            let base = synth::MultiTaskSpec::new(spec.count("tasks", 5)?, spec.count("m", 200)?, spec.count("d", 10)?);
            let s = synth::MultiTaskSpec {
                noise_scale: spec.real("noise", base.noise_scale),
                lambda: m.multitask_lambda,
                ..base
            };
            synth::multitask(&s, seed).and_then(|d| problems::multitask(&d))
        }
        (DataSource::Synth(spec), ProblemKind::Cluster) => {
            check_keys(cfg.problem, spec)?;
            let k = spec.count("k", 3)?;
            let base = synth::ClusterSpec::new(spec.count("d", 30)?, k, spec.count("p", 200)?);
            let s = synth::ClusterSpec {
                q: spec.count("q", base.q)?,
                separation: spec.real("sep", base.separation),
                jitter: spec.real("jitter", base.jitter),
                ..base
            };
            synth::cluster(&s, seed)
                .and_then(|c| c.into_data(k, m.cluster))
                .and_then(|d| problems::stream_cluster(&d))
        }
        (DataSource::File(path), kind) => {
            if !path.is_file() {
                return Err(CliError::Data(format!("{}: no such file", path.display())));
            }
            match kind {
                ProblemKind::Robust => {
                    data::load_regression(path, m.robust).and_then(|d| problems::robust_regression(&d))
                }
                ProblemKind::Multitask => {
                    data::load_multitask(path, m.multitask_lambda).and_then(|d| problems::multitask(&d))
                }
                ProblemKind::Cluster => data::load_cluster(path, m.clusters, m.cluster)
                    .and_then(|d| problems::stream_cluster(&d)),
            }
        }
    };
    built.map_err(problem_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_spec_parsing() {
        let s: SynthSpec = "d=10, p=2000".parse().unwrap();
        assert_eq!(s.0["d"], 10.0);
        assert_eq!(s.0["p"], 2000.0);
        assert_eq!(s.to_string(), "d=10,p=2000");
        assert!("d10".parse::<SynthSpec>().is_err());
        assert!("d=x".parse::<SynthSpec>().is_err());
        assert_eq!("".parse::<SynthSpec>().unwrap(), SynthSpec::default());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in VariantArg::ALL {
            assert_eq!(v.name().parse::<VariantArg>().unwrap(), v);
        }
    }

    #[test]
    fn default_fixed_batch_is_a_tenth() {
        let cfg = ExperimentConfig::new(ProblemKind::Robust, DataSource::Synth(SynthSpec::default()), VariantArg::Me1);
        assert_eq!(cfg.variant(2000), Variant::Me1 { batch: 200 });
        assert_eq!(cfg.variant(5), Variant::Me1 { batch: 1 });
    }

    #[test]
    fn unknown_synth_key_is_usage_error() {
        let cfg = ExperimentConfig::new(
            ProblemKind::Cluster,
            DataSource::Synth("d=8,p=5,tasks=2".parse().unwrap()),
            VariantArg::Pm,
        );
        assert!(matches!(build_problem(&cfg), Err(CliError::Usage(_))));
    }

    #[test]
    fn small_synthetic_problems_build() {
        for (kind, spec) in [
            (ProblemKind::Robust, "d=3,p=20"),
            (ProblemKind::Multitask, "tasks=2,m=5,d=3"),
            (ProblemKind::Cluster, "d=6,k=2,p=4"),
        ] {
            let cfg = ExperimentConfig::new(kind, DataSource::Synth(spec.parse().unwrap()), VariantArg::Rm);
            let p = build_problem(&cfg).unwrap();
            assert_eq!(p.name, kind.name());
        }
    }
}
