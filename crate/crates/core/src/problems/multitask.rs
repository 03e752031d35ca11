//! Multi-task relationship learning with a covariance-coupled regularizer:
//!
//! ```text
//! min (1/T) sum_i (1/m_i) sum_j phi(w_i^T p_ij - q_ij) + lambda tr(W^T P(Sigma) W)
//! s.t. Sigma in S^T_+,  tr(Sigma) = 1
//! ```
//!
//! The flat variable is `(vec(W), svec(Sigma))` with `W` stored row by row
//! (one row per task). `W` lives in a free block.

use nalgebra::{Cholesky, DMatrix};

use super::{robust_loss, robust_loss_derivative, ConicProblem, Objective, OracleError, ProblemError};
use crate::cones::Cone;
use crate::kkt::AffineConstraints;
use crate::linalg::{self, smat, svec, svec_len};

/// The map `P` in the regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coupling {
    /// `P(Sigma) = Sigma^{-1}`
    #[default]
    InverseCovariance,
    /// `P(Sigma) = I`: an uncoupled ridge penalty.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    /// `m_i x d`
    pub features: DMatrix<f64>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskData {
    pub tasks: Vec<TaskData>,
    pub lambda: f64,
    pub coupling: Coupling,
}

impl MultiTaskData {
    pub fn new(tasks: Vec<TaskData>, lambda: f64) -> Result<Self, ProblemError> {
        if tasks.is_empty() {
            return Err(ProblemError::Data("no tasks".into()));
        }
        let d = tasks[0].features.ncols();
        for (i, t) in tasks.iter().enumerate() {
            if t.features.nrows() == 0 {
                return Err(ProblemError::Data(format!("task {i} has no samples")));
            }
            if t.features.ncols() != d || t.targets.len() != t.features.nrows() {
                return Err(ProblemError::Data(format!("task {i} has inconsistent dimensions")));
            }
        }
        if !(lambda > 0.0) {
            return Err(ProblemError::Data("lambda must be positive".into()));
        }
        Ok(Self {
            tasks,
            lambda,
            coupling: Coupling::default(),
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn n_features(&self) -> usize {
        self.tasks[0].features.ncols()
    }

    /// Mean robust loss of each task at the weights in `x`.
    pub fn task_losses(&self, x: &[f64]) -> Vec<f64> {
        let d = self.n_features();
        self.tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let w = &x[i * d..(i + 1) * d];
                (0..t.targets.len())
                    .map(|j| {
                        let r: f64 = t.features.row(j).iter().zip(w).map(|(a, b)| a * b).sum();
                        robust_loss(r - t.targets[j])
                    })
                    .sum::<f64>()
                    / t.targets.len() as f64
            })
            .collect()
    }
}

struct MultiTaskObjective {
    n_tasks: usize,
    d: usize,
    /// Per component: task, row-major features and target.
    task_of: Vec<usize>,
    features: Vec<f64>,
    targets: Vec<f64>,
    /// `N / (T m_i)` for the task of each component.
    weight: Vec<f64>,
    lambda: f64,
    coupling: Coupling,
}

impl MultiTaskObjective {
    fn split<'a>(&self, x: &'a [f64]) -> (DMatrix<f64>, &'a [f64]) {
        let wlen = self.n_tasks * self.d;
        (
            DMatrix::from_row_slice(self.n_tasks, self.d, &x[..wlen]),
            &x[wlen..],
        )
    }

    fn coupling_matrix(&self, sigma: &[f64]) -> Result<DMatrix<f64>, OracleError> {
        match self.coupling {
            Coupling::Identity => Ok(DMatrix::identity(self.n_tasks, self.n_tasks)),
            Coupling::InverseCovariance => {
                let s = smat(sigma, self.n_tasks);
                let chol = Cholesky::new(s)
                    .ok_or_else(|| OracleError::Domain("Sigma is not positive definite".into()))?;
                Ok(chol.inverse())
            }
        }
    }

    /// Gradient of `lambda tr(W^T P W)` written into a flat vector.
    fn regularizer_gradient(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let (w, sigma) = self.split(x);
        let p = self.coupling_matrix(sigma)?;
        let pw = &p * &w;
        let mut g = vec![0.0; x.len()];
        let gw = &pw * (2.0 * self.lambda);
        for i in 0..self.n_tasks {
            for j in 0..self.d {
                g[i * self.d + j] = gw[(i, j)];
            }
        }
        if self.coupling == Coupling::InverseCovariance {
            // d/dSigma tr(W^T Sigma^{-1} W) = -Sigma^{-1} W W^T Sigma^{-1}
            let gs = -(&pw * pw.transpose()) * self.lambda;
            let wlen = self.n_tasks * self.d;
            g[wlen..].copy_from_slice(&svec(&gs));
        }
        Ok(g)
    }

    fn add_loss_gradient(&self, c: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        let d = self.d;
        let t = self.task_of[c];
        let w = &x[t * d..(t + 1) * d];
        let a = &self.features[c * d..(c + 1) * d];
        let r = linalg::dot(a, w) - self.targets[c];
        let s = scale * self.weight[c] * robust_loss_derivative(r);
        linalg::axpy(s, a, &mut out[t * d..(t + 1) * d]);
    }
}

impl Objective for MultiTaskObjective {
    fn dim(&self) -> usize {
        self.n_tasks * self.d + svec_len(self.n_tasks)
    }

    fn n_components(&self) -> usize {
        self.targets.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        let d = self.d;
        let n = self.targets.len() as f64;
        let loss: f64 = (0..self.targets.len())
            .map(|c| {
                let t = self.task_of[c];
                let r = linalg::dot(&self.features[c * d..(c + 1) * d], &x[t * d..(t + 1) * d])
                    - self.targets[c];
                self.weight[c] * robust_loss(r)
            })
            .sum::<f64>()
            / n;
        let (w, sigma) = self.split(x);
        let p = self.coupling_matrix(sigma)?;
        let reg = (w.transpose() * &p * &w).trace();
        Ok(loss + self.lambda * reg)
    }

    fn component_gradient(&self, c: usize, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let mut g = self.regularizer_gradient(x)?;
        self.add_loss_gradient(c, x, 1.0, &mut g);
        Ok(g)
    }

    fn batch_gradient(&self, idx: &[usize], x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let mut g = self.regularizer_gradient(x)?;
        let scale = 1.0 / idx.len().max(1) as f64;
        for &c in idx {
            self.add_loss_gradient(c, x, scale, &mut g);
        }
        Ok(g)
    }
}

/// Builds the conic problem with `W^0 = 0` and `Sigma^0 = I / T`.
pub fn multitask(data: &MultiTaskData) -> Result<ConicProblem, ProblemError> {
    let t = data.n_tasks();
    let d = data.n_features();
    let wlen = t * d;
    let n = wlen + svec_len(t);
    let cone = Cone::Product(vec![Cone::Free(wlen), Cone::Psd(t)]);

    // <I, Sigma> = 1
    let ident = DMatrix::<f64>::identity(t, t);
    let mut a = DMatrix::zeros(1, n);
    for (j, v) in svec(&ident).into_iter().enumerate() {
        a[(0, wlen + j)] = v;
    }
    let constraints = AffineConstraints::new(a, vec![1.0])?;

    let mut x0 = vec![0.0; n];
    x0[wlen..].copy_from_slice(&svec(&(ident / t as f64)));

    let total: usize = data.tasks.iter().map(|t| t.targets.len()).sum();
    let mut task_of = Vec::with_capacity(total);
    let mut features = Vec::with_capacity(total * d);
    let mut targets = Vec::with_capacity(total);
    let mut weight = Vec::with_capacity(total);
    for (i, task) in data.tasks.iter().enumerate() {
        let w = total as f64 / (t as f64 * task.targets.len() as f64);
        for j in 0..task.targets.len() {
            task_of.push(i);
            features.extend(task.features.row(j).iter());
            targets.push(task.targets[j]);
            weight.push(w);
        }
    }
    let objective = MultiTaskObjective {
        n_tasks: t,
        d,
        task_of,
        features,
        targets,
        weight,
        lambda: data.lambda,
        coupling: data.coupling,
    };
    ConicProblem::new("multitask", cone, constraints, x0, Box::new(objective))
}
