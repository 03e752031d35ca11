//! The stochastic interior-point loop.
//!
//! Each iteration forms a gradient estimate, shifts it by the barrier,
//! projects it onto the null space of `A` in the local metric and takes a
//! step of local length exactly `eta_k`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cones::{ConeError, InteriorPoint};
use crate::estimators::{shift_with_barrier, EstimatorError, EstimatorState, Schedule, Variant};
use crate::kkt::{self, KktError};
use crate::linalg;
use crate::problems::{equality_tolerance, ConicProblem, OracleError, ProblemError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Kkt(#[from] KktError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error("iterate {k} left the cone interior even with a halved step: {reason}")]
    LeftInterior { k: usize, reason: String },
    #[error("equality drift {drift:e} at iterate {k} exceeds {tol:e}")]
    Drift { k: usize, drift: f64, tol: f64 },
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

/// One line of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Samples consumed divided by the dataset size.
    pub epoch: f64,
    /// `f(x^k) / |f(x^0)|`
    pub f_rel: f64,
    /// `|m^k + A^T lambda^k|*_{x^k}` over its value at `k = 0`.
    pub stat_rel: f64,
    pub mu: f64,
    pub eta: f64,
    pub samples: u64,
    pub wall_ms: f64,
}

/// Diagnostics of a single iteration, beyond what goes into a record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub k: usize,
    pub eta: f64,
    pub mu: f64,
    /// `|m^k + A^T lambda^k|*_{x^k}`
    pub stationarity: f64,
    /// Measured `|x^{k+1} - x^k|_{x^k}`; zero when no step was taken.
    pub step_length: f64,
    /// `|A x^{k+1} - b|_inf`
    pub drift: f64,
    pub samples: u64,
    /// The step was retried at `eta_k / 2`.
    pub halved: bool,
    /// The search direction vanished and no step was taken.
    pub stationary: bool,
}

/// Iteration state; owns a reference to the problem it solves.
pub struct SolverState<'a> {
    problem: &'a ConicProblem,
    schedule: Schedule,
    x: InteriorPoint,
    lambda: Vec<f64>,
    k: usize,
    estimator: EstimatorState,
    drift_tol: f64,
}

impl std::fmt::Debug for SolverState<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolverState")
            .field("problem", &self.problem.name)
            .field("variant", &self.schedule.variant)
            .field("k", &self.k)
            .field("samples", &self.estimator.samples())
            .finish()
    }
}

impl<'a> SolverState<'a> {
    pub fn new(problem: &'a ConicProblem, schedule: Schedule, seed: u64) -> Result<Self, SolverError> {
        problem.check_feasible(&problem.x0)?;
        let x = problem.cone.point(problem.x0.clone())?;
        Ok(Self {
            problem,
            schedule,
            x,
            lambda: vec![0.0; problem.constraints.rows()],
            k: 0,
            estimator: EstimatorState::new(problem.dim(), seed),
            drift_tol: equality_tolerance(&problem.constraints),
        })
    }

    pub fn x(&self) -> &[f64] {
        self.x.as_slice()
    }

    pub fn point(&self) -> &InteriorPoint {
        &self.x
    }

    /// Multipliers from the most recent step.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn samples(&self) -> u64 {
        self.estimator.samples()
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Performs iteration `k`, moving from `x^k` to `x^{k+1}`.
    pub fn step(&mut self) -> Result<StepReport, SolverError> {
        let k = self.k;
        let values = self.schedule.at(k);
        let problem = self.problem;
        let m_bar = self
            .estimator
            .estimate(&self.schedule, &values, problem.objective.as_ref(), &problem.cone, self.x.as_slice())?
            .to_vec();
        let m = shift_with_barrier(&m_bar, values.mu, &self.x.barrier_gradient());
        let dual = kkt::solve_dual(&problem.constraints, &self.x, &m)?;
        self.lambda.clone_from(&dual.lambda);
        let stationarity = dual.residual_dual_norm;
        let mut report = StepReport {
            k,
            eta: values.eta,
            mu: values.mu,
            stationarity,
            step_length: 0.0,
            drift: problem.constraints.residual_inf(self.x.as_slice()),
            samples: self.estimator.samples(),
            halved: false,
            stationary: false,
        };
        let direction = match kkt::search_direction(&dual) {
            Ok(d) => d,
            Err(KktError::EstimatedStationary { .. }) => {
                report.stationary = true;
                return Ok(report);
            }
            Err(e) => return Err(e.into()),
        };

        let mut eta = values.eta;
        let next = loop {
            let mut y = self.x.as_slice().to_vec();
            linalg::axpy(eta, &direction, &mut y);
            match problem.cone.point(y) {
                Ok(p) => break p,
                Err(e) if !report.halved => {
                    log::warn!("iterate {k}: step of length {eta:e} left the interior ({e}); retrying at half length");
                    report.halved = true;
                    eta *= 0.5;
                }
                Err(e) => {
                    return Err(SolverError::LeftInterior {
                        k,
                        reason: e.to_string(),
                    })
                }
            }
        };
        let delta: Vec<f64> = next.as_slice().iter().zip(self.x.as_slice()).map(|(a, b)| a - b).collect();
        report.step_length = self.x.local_norm(&delta)?;
        report.drift = problem.constraints.residual_inf(next.as_slice());
        if report.drift > self.drift_tol {
            return Err(SolverError::Drift {
                k: k + 1,
                drift: report.drift,
                tol: self.drift_tol,
            });
        }
        self.x = next;
        self.k += 1;
        Ok(report)
    }
}

/// `|residual|*_x`, the dual local norm of the KKT residual.
pub fn stationarity_measure(x: &InteriorPoint, residual: &[f64]) -> Result<f64, SolverError> {
    Ok(kkt::stationarity_measure(x, residual)?)
}

/// The measure `|grad phi_mu(x) + A^T lambda|*_x` with the exact gradient
/// and the optimal multiplier for it.
pub fn true_stationarity(problem: &ConicProblem, x: &InteriorPoint, mu: f64) -> Result<f64, SolverError> {
    let g = problem.objective.gradient(x.as_slice())?;
    let m = shift_with_barrier(&g, mu, &x.barrier_gradient());
    Ok(kkt::solve_dual(&problem.constraints, x, &m)?.residual_dual_norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// Stop once this many dataset passes worth of samples are consumed.
    Epochs(f64),
    Iterations(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Record every n-th iteration; the last iteration is always recorded.
    pub record_every: usize,
    /// Stop once `stat_rel <= epsilon`.
    pub early_stop: bool,
    /// Fill `wall_ms`; otherwise it stays 0 so traces are reproducible.
    pub wall_clock: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_every: 1,
            early_stop: true,
            wall_clock: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Budget,
    Converged,
    EstimatedStationary,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub variant: Variant,
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    /// Iterations performed.
    pub iterations: usize,
    pub f0: f64,
    pub stat0: f64,
    /// Iterations whose step was halved.
    pub halved_steps: usize,
    pub final_x: Vec<f64>,
}

impl Trace {
    /// The record of an iterate drawn uniformly from
    /// `{floor(K/2), ..., K-1}`; with sparse recording, the nearest recorded
    /// iterate at or before the draw.
    pub fn draw_reported(&self, seed: u64) -> Option<&IterationRecord> {
        let big_k = self.iterations;
        if big_k == 0 {
            return self.records.first();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(big_k / 2..big_k);
        self.records.iter().rev().find(|r| r.k <= k)
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

fn exhausted(budget: Budget, state: &SolverState<'_>, p: usize) -> bool {
    match budget {
        Budget::Iterations(n) => state.iteration() >= n,
        Budget::Epochs(e) => state.samples() as f64 >= e * p as f64,
    }
}

/// Runs until the budget is spent, the relative measure drops to `epsilon`
/// (when enabled) or the direction vanishes.
pub fn run(
    problem: &ConicProblem,
    schedule: Schedule,
    budget: Budget,
    seed: u64,
    options: RunOptions,
) -> Result<Trace, SolverError> {
    run_with(problem, schedule, budget, seed, options, |_, _| Ok(()))
}

/// As [`run`], calling `inspect` after every iteration with the state at
/// `x^{k+1}` and the step report.
pub fn run_with<F>(
    problem: &ConicProblem,
    schedule: Schedule,
    budget: Budget,
    seed: u64,
    options: RunOptions,
    mut inspect: F,
) -> Result<Trace, SolverError>
where
    F: FnMut(&SolverState<'_>, &StepReport) -> Result<(), SolverError>,
{
    if options.record_every == 0 {
        return Err(SolverError::Config("record_every must be positive".into()));
    }
    match budget {
        Budget::Epochs(e) if !(e > 0.0 && e.is_finite()) => {
            return Err(SolverError::Config(format!("epoch budget {e}")))
        }
        Budget::Iterations(0) => return Err(SolverError::Config("iteration budget is zero".into())),
        _ => {}
    }
    let start = Instant::now();
    let p = problem.n_components();
    let mut state = SolverState::new(problem, schedule, seed)?;
    let f0 = problem.objective.value(state.x())?;
    let f_scale = if f0.abs() > f64::MIN_POSITIVE { f0.abs() } else { 1.0 };
    let mut stat0 = f64::NAN;
    let mut records = Vec::new();
    let mut halved_steps = 0;
    // x^k, kept so the final iterate can be recorded whatever its index.
    let mut x_k = state.x().to_vec();
    let termination = loop {
        let fx = if state.iteration() % options.record_every == 0 {
            Some(problem.objective.value(state.x())?)
        } else {
            x_k.copy_from_slice(state.x());
            None
        };
        let report = state.step()?;
        if report.k == 0 {
            stat0 = if report.stationarity > 0.0 { report.stationarity } else { 1.0 };
        }
        halved_steps += report.halved as usize;
        let stat_rel = report.stationarity / stat0;
        let make = |f: f64| IterationRecord {
            k: report.k,
            epoch: report.samples as f64 / p as f64,
            f_rel: f / f_scale,
            stat_rel,
            mu: report.mu,
            eta: report.eta,
            samples: report.samples,
            wall_ms: if options.wall_clock {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        };
        inspect(&state, &report)?;
        let stop = if report.stationary {
            Some(Termination::EstimatedStationary)
        } else if options.early_stop && stat_rel <= schedule.epsilon {
            Some(Termination::Converged)
        } else if exhausted(budget, &state, p) {
            Some(Termination::Budget)
        } else {
            None
        };
        match (fx, stop) {
            (Some(f), _) => records.push(make(f)),
            (None, Some(_)) => records.push(make(problem.objective.value(&x_k)?)),
            (None, None) => {}
        }
        if let Some(t) = stop {
            break t;
        }
    };
    Ok(Trace {
        variant: schedule.variant,
        records,
        termination,
        iterations: state.iteration(),
        f0,
        stat0,
        halved_steps,
        final_x: state.x().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::Cone;
    use crate::kkt::AffineConstraints;
    use crate::problems::Objective;
    use nalgebra::DMatrix;

    /// `f(x) = |x - c|^2 / 2` as a single component.
    struct Toy {
        c: Vec<f64>,
    }

    impl Objective for Toy {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn n_components(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
            Ok(x.iter().zip(&self.c).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum())
        }
        fn component_gradient(&self, _: usize, x: &[f64]) -> Result<Vec<f64>, OracleError> {
            Ok(x.iter().zip(&self.c).map(|(a, b)| a - b).collect())
        }
    }

    fn toy() -> ConicProblem {
        ConicProblem::new(
            "toy",
            Cone::Orthant(2),
            AffineConstraints::empty(2),
            vec![1.0, 1.0],
            Box::new(Toy { c: vec![2.0, 2.0] }),
        )
        .unwrap()
    }

    #[test]
    fn first_step_of_toy_problem() {
        let problem = toy();
        // eta_0 = s = 0.25, mu_0 = 1
        let schedule = Schedule::new(Variant::Fg, 0.25, 0.01, 2.0).unwrap();
        let mut state = SolverState::new(&problem, schedule, 0).unwrap();
        let report = state.step().unwrap();
        // m_bar = (-1,-1), grad B = (-1,-1), m = 2 m_bar + grad B = (-3,-3)
        let m: [f64; 2] = [2.0 * -1.0 + -1.0, 2.0 * -1.0 + -1.0];
        let norm = (m[0] * m[0] + m[1] * m[1]).sqrt();
        assert!((report.stationarity - norm).abs() < 1e-14);
        let x1 = 1.0 - 0.25 * m[0] / norm;
        assert!((state.x()[0] - x1).abs() < 1e-14);
        assert!((state.x()[1] - x1).abs() < 1e-14);
        assert!((x1 - 1.17678).abs() < 1e-5);
        assert!((report.step_length - 0.25).abs() < 1e-14);
    }

    #[test]
    fn full_gradient_drives_measure_down() {
        let problem = toy();
        let schedule = Schedule::new(Variant::Fg, 0.5, 1e-4, 2.0).unwrap();
        let opts = RunOptions {
            early_stop: false,
            record_every: 1000,
            ..RunOptions::default()
        };
        // The unit-local-length step keeps the measure near eta_k, so the
        // budget has to push eta_k well below 1e-3.
        let trace = run(&problem, schedule, Budget::Iterations(400_000), 1, opts).unwrap();
        let last = trace.last().unwrap();
        assert!(last.stat_rel < 1e-3, "stat_rel = {}", last.stat_rel);
        assert_eq!(trace.termination, Termination::Budget);
    }

    #[test]
    fn full_gradient_proxy_is_exact() {
        let problem = toy();
        let schedule = Schedule::new(Variant::Fg, 0.5, 1e-4, 2.0).unwrap();
        let mut state = SolverState::new(&problem, schedule, 0).unwrap();
        for _ in 0..50 {
            let k = state.iteration();
            let x = state.point().clone();
            let report = state.step().unwrap();
            let exact = true_stationarity(&problem, &x, schedule.at(k).mu).unwrap();
            assert!((exact - report.stationarity).abs() <= 1e-12 * exact.max(1.0));
        }
    }

    #[test]
    fn measure_matches_dual_norm() {
        let x = Cone::Orthant(2).point(vec![1.0, 1.0]).unwrap();
        assert_eq!(stationarity_measure(&x, &[0.0, 0.0]).unwrap(), 0.0);
        assert!((stationarity_measure(&x, &[1.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stationary_estimate_stops_without_moving() {
        let problem = ConicProblem::new(
            "flat",
            Cone::Orthant(1),
            AffineConstraints::new(DMatrix::from_row_slice(1, 1, &[1.0]), vec![1.0]).unwrap(),
            vec![1.0],
            Box::new(Toy { c: vec![0.0] }),
        )
        .unwrap();
        let schedule = Schedule::new(Variant::Fg, 0.5, 0.01, 1.0).unwrap();
        let trace = run(&problem, schedule, Budget::Iterations(10), 0, RunOptions::default()).unwrap();
        assert_eq!(trace.termination, Termination::EstimatedStationary);
        assert_eq!(trace.iterations, 0);
        assert_eq!(trace.final_x, vec![1.0]);
    }

    #[test]
    fn reported_draw_is_in_upper_half() {
        let problem = toy();
        let schedule = Schedule::new(Variant::Me1 { batch: 1 }, 0.3, 1e-6, 2.0).unwrap();
        let trace = run(&problem, schedule, Budget::Iterations(41), 3, RunOptions::default()).unwrap();
        for seed in 0..50 {
            let r = trace.draw_reported(seed).unwrap();
            assert!((20..41).contains(&r.k));
        }
    }
}
