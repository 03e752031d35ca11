//! Robust linear regression with a second-order-cone chance-constraint
//! approximation:
//!
//! ```text
//! min (1/p) sum_i phi(w^T a_i - b_i) + l1 * theta + l2 * v
//! s.t. (w, v) in Q^{d+1},  (S w, sqrt(eta) * theta) in Q^{d+1}
//! ```
//!
//! with `S = Sigma^{1/2}` and `phi(t) = t^2 / (1 + t^2)`.
//!
//! The flat variable is `(w, v, s, tau)` with `s = S w` imposed through
//! `d` equality rows and `tau = sqrt(eta) * theta`, so both second-order
//! constraints are plain cone memberships.

use nalgebra::DMatrix;

use super::{robust_loss, robust_loss_derivative, ConicProblem, Objective, OracleError, ProblemError};
use crate::cones::Cone;
use crate::kkt::AffineConstraints;
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct RobustRegressionData {
    /// `p x d`, one sample per row.
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    /// Symmetric PSD root of the feature covariance.
    pub sigma_root: DMatrix<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Desired violation probability of the chance constraint.
    pub eta_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta_prob: f64,
}

impl Default for RobustParams {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.01,
            eta_prob: 0.1,
        }
    }
}

/// Sample covariance (divided by `p`) of the rows of `features`.
pub fn feature_covariance(features: &DMatrix<f64>) -> DMatrix<f64> {
    let p = features.nrows() as f64;
    let mean = features.row_mean();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.transpose() * centered / p
}

impl RobustRegressionData {
    /// Uses the root of the sample covariance of `features`.
    pub fn new(features: DMatrix<f64>, labels: Vec<f64>, params: RobustParams) -> Result<Self, ProblemError> {
        let cov = feature_covariance(&features);
        let sigma_root = linalg::sym_sqrt(&cov, 1e-10)
            .ok_or_else(|| ProblemError::Data("feature covariance is not PSD".into()))?;
        Self::with_sigma_root(features, labels, sigma_root, params)
    }

    pub fn with_sigma_root(
        features: DMatrix<f64>,
        labels: Vec<f64>,
        sigma_root: DMatrix<f64>,
        params: RobustParams,
    ) -> Result<Self, ProblemError> {
        let (p, d) = features.shape();
        if p == 0 || d == 0 {
            return Err(ProblemError::Data("empty feature matrix".into()));
        }
        if labels.len() != p {
            return Err(ProblemError::Data(format!("{} labels for {p} samples", labels.len())));
        }
        if sigma_root.shape() != (d, d) {
            return Err(ProblemError::Data(format!(
                "covariance root is {:?}, expected ({d}, {d})",
                sigma_root.shape()
            )));
        }
        let asym = (&sigma_root - sigma_root.transpose()).amax();
        if asym > 1e-10 * (1.0 + sigma_root.amax()) {
            return Err(ProblemError::Data("covariance root is not symmetric".into()));
        }
        if linalg::sym_sqrt(&sigma_root, 1e-10).is_none() {
            return Err(ProblemError::Data("covariance root is not PSD".into()));
        }
        if !(params.eta_prob > 0.0 && params.lambda1 > 0.0 && params.lambda2 > 0.0) {
            return Err(ProblemError::Data("tuning parameters must be positive".into()));
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(ProblemError::Data("non-finite feature or label".into()));
        }
        Ok(Self {
            features,
            labels,
            sigma_root,
            lambda1: params.lambda1,
            lambda2: params.lambda2,
            eta_prob: params.eta_prob,
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Splits a flat variable into `(w, v, theta)`.
    pub fn unpack(&self, x: &[f64]) -> (Vec<f64>, f64, f64) {
        let d = self.n_features();
        (x[..d].to_vec(), x[d], x[2 * d + 1] / self.eta_prob.sqrt())
    }
}

struct RobustObjective {
    /// Row-major `p x d`.
    a: Vec<f64>,
    b: Vec<f64>,
    d: usize,
    lambda2: f64,
    /// `lambda1 / sqrt(eta)`, the coefficient of `tau`.
    tau_coef: f64,
}

impl RobustObjective {
    fn residual(&self, i: usize, w: &[f64]) -> f64 {
        linalg::dot(&self.a[i * self.d..(i + 1) * self.d], w) - self.b[i]
    }
}

impl Objective for RobustObjective {
    fn dim(&self) -> usize {
        2 * self.d + 2
    }

    fn n_components(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        let d = self.d;
        let w = &x[..d];
        let loss: f64 = (0..self.b.len()).map(|i| robust_loss(self.residual(i, w))).sum::<f64>()
            / self.b.len() as f64;
        Ok(loss + self.lambda2 * x[d] + self.tau_coef * x[2 * d + 1])
    }

    fn component_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let d = self.d;
        let mut g = vec![0.0; self.dim()];
        let scale = robust_loss_derivative(self.residual(i, &x[..d]));
        for (gj, aj) in g[..d].iter_mut().zip(&self.a[i * d..(i + 1) * d]) {
            *gj = scale * aj;
        }
        g[d] = self.lambda2;
        g[2 * d + 1] = self.tau_coef;
        Ok(g)
    }
}

/// Builds the lifted conic problem; `x0` is `(w, v, theta) = (0, 1, 1)`.
pub fn robust_regression(data: &RobustRegressionData) -> Result<ConicProblem, ProblemError> {
    let (p, d) = data.features.shape();
    let n = 2 * d + 2;
    let cone = Cone::Product(vec![Cone::SecondOrder(d), Cone::SecondOrder(d)]);

    // S w - s = 0
    let mut a = DMatrix::zeros(d, n);
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] = data.sigma_root[(i, j)];
        }
        a[(i, d + 1 + i)] = -1.0;
    }
    let constraints = AffineConstraints::new(a, vec![0.0; d])?;

    let sqrt_eta = data.eta_prob.sqrt();
    let mut x0 = vec![0.0; n];
    x0[d] = 1.0;
    x0[2 * d + 1] = sqrt_eta;

    let mut flat = Vec::with_capacity(p * d);
    for i in 0..p {
        flat.extend(data.features.row(i).iter());
    }
    let objective = RobustObjective {
        a: flat,
        b: data.labels.clone(),
        d,
        lambda2: data.lambda2,
        tau_coef: data.lambda1 / sqrt_eta,
    };
    ConicProblem::new("robust", cone, constraints, x0, Box::new(objective))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RobustRegressionData {
        let features = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, -1.0, 1.5, 0.2]);
        RobustRegressionData::new(features, vec![0.4, -1.2, 0.9, 2.0], RobustParams::default()).unwrap()
    }

    #[test]
    fn initial_point_is_strictly_feasible() {
        let data = small();
        let prob = robust_regression(&data).unwrap();
        assert!(prob.cone.contains_interior(&prob.x0));
        assert_eq!(prob.constraints.residual_inf(&prob.x0), 0.0);
        let (w, v, theta) = data.unpack(&prob.x0);
        assert_eq!(w, vec![0.0, 0.0]);
        assert_eq!(v, 1.0);
        assert!((theta - 1.0).abs() < 1e-15);
    }

    #[test]
    fn loss_gradient_at_origin() {
        let data = small();
        let prob = robust_regression(&data).unwrap();
        let g = prob.objective.gradient(&prob.x0).unwrap();
        let p = data.labels.len() as f64;
        for j in 0..2 {
            let expected: f64 = (0..4)
                .map(|i| {
                    let b = data.labels[i];
                    -2.0 * b * data.features[(i, j)] / ((1.0 + b * b) * (1.0 + b * b))
                })
                .sum::<f64>()
                / p;
            assert!((g[j] - expected).abs() < 1e-14);
        }
        assert_eq!(g[2], data.lambda2);
        assert!((g[5] - data.lambda1 / data.eta_prob.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bad_covariance_root_is_rejected() {
        let features = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = RobustRegressionData::with_sigma_root(features, vec![0.0, 1.0], bad, RobustParams::default());
        assert!(matches!(err, Err(ProblemError::Data(_))));
    }
}
