//! Benchmark problem families and the finite-sum oracle interface.

pub mod cluster;
pub mod data;
pub mod multitask;
pub mod robust;
pub mod synth;

use std::fmt;

use thiserror::Error;

use crate::cones::{Cone, ConeError};
use crate::kkt::{AffineConstraints, KktError};
use crate::linalg;

pub use cluster::{stream_cluster, StreamClusterData};
pub use multitask::{multitask, MultiTaskData};
pub use robust::{robust_regression, RobustRegressionData};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle evaluated outside its domain: {0}")]
    Domain(String),
    #[error("numerical failure in oracle: {0}")]
    Numerical(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid data: {0}")]
    Data(String),
    #[error("initial point is not strictly feasible: {0}")]
    InfeasibleStart(String),
    #[error(transparent)]
    Constraints(#[from] KktError),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Finite-sum objective `f(x) = (1/p) sum_i f_i(x)` with per-component
/// gradients `G(x; xi_i)`.
///
/// The mean of the component gradients must equal the full gradient; each
/// component is an unbiased estimator of `grad f` under uniform sampling.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    /// Dataset size `p`.
    fn n_components(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64, OracleError>;

    /// `G(x; xi_i)`
    fn component_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>, OracleError>;

    /// `grad f(x)`; the default averages every component in index order.
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let idx: Vec<usize> = (0..self.n_components()).collect();
        self.batch_gradient(&idx, x)
    }

    /// Mean of the listed component gradients (indices may repeat).
    fn batch_gradient(&self, idx: &[usize], x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let mut acc = vec![0.0; self.dim()];
        for &i in idx {
            let g = self.component_gradient(i, x)?;
            linalg::axpy(1.0, &g, &mut acc);
        }
        let inv = 1.0 / idx.len().max(1) as f64;
        acc.iter_mut().for_each(|v| *v *= inv);
        Ok(acc)
    }
}

/// `min f(x) s.t. Ax = b, x in K` together with a strictly feasible start.
pub struct ConicProblem {
    pub name: String,
    pub cone: Cone,
    pub constraints: AffineConstraints,
    pub x0: Vec<f64>,
    pub objective: Box<dyn Objective>,
}

impl fmt::Debug for ConicProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConicProblem")
            .field("name", &self.name)
            .field("cone", &self.cone)
            .field("rows", &self.constraints.rows())
            .field("dim", &self.x0.len())
            .field("components", &self.objective.n_components())
            .finish()
    }
}

/// Equality drift allowed for a strictly feasible point.
pub fn equality_tolerance(constraints: &AffineConstraints) -> f64 {
    1e-8 * (1.0 + linalg::norm_inf(constraints.rhs()))
}

impl ConicProblem {
    pub fn new(
        name: impl Into<String>,
        cone: Cone,
        constraints: AffineConstraints,
        x0: Vec<f64>,
        objective: Box<dyn Objective>,
    ) -> Result<Self, ProblemError> {
        let n = cone.dim();
        if constraints.cols() != n || x0.len() != n || objective.dim() != n {
            return Err(ProblemError::Data(format!(
                "dimension mismatch: cone {n}, constraints {}, x0 {}, objective {}",
                constraints.cols(),
                x0.len(),
                objective.dim()
            )));
        }
        if objective.n_components() == 0 {
            return Err(ProblemError::Data("objective has no components".into()));
        }
        let problem = Self {
            name: name.into(),
            cone,
            constraints,
            x0,
            objective,
        };
        problem.check_feasible(&problem.x0)?;
        Ok(problem)
    }

    /// Interior membership plus `|Ax - b|_inf <= 1e-8 (1 + |b|_inf)`.
    pub fn check_feasible(&self, x: &[f64]) -> Result<(), ProblemError> {
        self.cone
            .point(x.to_vec())
            .map_err(|e| ProblemError::InfeasibleStart(e.to_string()))?;
        let drift = self.constraints.residual_inf(x);
        let tol = equality_tolerance(&self.constraints);
        if drift > tol {
            return Err(ProblemError::InfeasibleStart(format!(
                "|Ax - b|_inf = {drift:e} exceeds {tol:e}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn n_components(&self) -> usize {
        self.objective.n_components()
    }
}

/// Robust loss `t^2 / (1 + t^2)`.
pub fn robust_loss(t: f64) -> f64 {
    let t2 = t * t;
    t2 / (1.0 + t2)
}

/// Derivative `2t / (1 + t^2)^2` of [`robust_loss`].
pub fn robust_loss_derivative(t: f64) -> f64 {
    let q = 1.0 + t * t;
    2.0 * t / (q * q)
}
