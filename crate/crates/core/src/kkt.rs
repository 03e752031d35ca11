//! Dual solve and feasible search direction.
//!
//! With `H = hess B(x)^{-1}`, the multiplier is
//! `lambda = -(A H A^T)^{-1} A H m` and the primal direction is the
//! unit-local-norm vector `d = -H (m + A^T lambda) / |m + A^T lambda|_x^*`.
//! `A d = 0` by construction, so a step along `d` keeps `Ax = b`.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::cones::{ConeError, InteriorPoint};

/// Below this dual norm the residual is treated as exactly stationary.
pub const STATIONARITY_FLOOR: f64 = 1e-14;

const RANK_TOL: f64 = 1e-10;
const MAX_CONDITION: f64 = 1e14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KktError {
    #[error("constraint matrix has rank {rank} < {rows} rows")]
    RankDeficient { rank: usize, rows: usize },
    #[error("dependent constraint row {row} is inconsistent with the right-hand side (residual {residual:e})")]
    InconsistentRow { row: usize, residual: f64 },
    #[error("A H A^T is numerically singular (condition estimate {condition:e})")]
    IllPosed { condition: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("iterate is estimated-stationary (residual dual norm {norm:e})")]
    EstimatedStationary { norm: f64 },
    #[error(transparent)]
    Cone(#[from] ConeError),
}

/// Equality constraints `Ax = b` with `A` of full row rank (possibly no rows).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraints {
    a: DMatrix<f64>,
    b: Vec<f64>,
}

/// Rows chosen by Gram-Schmidt with largest-residual pivoting, in pivot order.
fn pivoted_rows(a: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let (m, _) = a.shape();
    let mut residual: Vec<DVector<f64>> = (0..m).map(|i| a.row(i).transpose()).collect();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut chosen = Vec::new();
    let mut remaining: Vec<usize> = (0..m).collect();
    while !remaining.is_empty() {
        let (pos, &best) = remaining
            .iter()
            .enumerate()
            .max_by(|(_, &i), (_, &j)| residual[i].norm().total_cmp(&residual[j].norm()))
            .unwrap();
        let nrm = residual[best].norm();
        if nrm <= tol {
            break;
        }
        let q = &residual[best] / nrm;
        remaining.swap_remove(pos);
        for &i in &remaining {
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                let c = q.dot(&residual[i]);
                residual[i].axpy(-c, &q, 1.0);
            }
        }
        basis.push(q);
        chosen.push(best);
    }
    chosen
}

impl AffineConstraints {
    /// Validates full row rank with tolerance `1e-10 * |A|_F`.
    pub fn new(a: DMatrix<f64>, b: Vec<f64>) -> Result<Self, KktError> {
        if b.len() != a.nrows() {
            return Err(KktError::DimensionMismatch {
                expected: a.nrows(),
                found: b.len(),
            });
        }
        let rank = pivoted_rows(&a, RANK_TOL * a.norm()).len();
        if rank < a.nrows() {
            return Err(KktError::RankDeficient {
                rank,
                rows: a.nrows(),
            });
        }
        Ok(Self { a, b })
    }

    /// Like [`AffineConstraints::new`], but drops linearly dependent rows
    /// after checking that they agree with the retained ones.
    pub fn deflated(a: DMatrix<f64>, b: Vec<f64>) -> Result<Self, KktError> {
        if b.len() != a.nrows() {
            return Err(KktError::DimensionMismatch {
                expected: a.nrows(),
                found: b.len(),
            });
        }
        let tol = RANK_TOL * a.norm();
        let mut keep = pivoted_rows(&a, tol);
        keep.sort_unstable();
        if keep.len() < a.nrows() {
            let kept = a.select_rows(keep.iter());
            let kept_b = DVector::from_iterator(keep.len(), keep.iter().map(|&i| b[i]));
            let gram = &kept * kept.transpose();
            let chol = Cholesky::new(gram).ok_or(KktError::IllPosed {
                condition: f64::INFINITY,
            })?;
            for row in (0..a.nrows()).filter(|i| !keep.contains(i)) {
                let coeffs = chol.solve(&(&kept * a.row(row).transpose()));
                let predicted = coeffs.dot(&kept_b);
                let residual = (predicted - b[row]).abs();
                if residual > 1e-8 * (1.0 + b[row].abs()) {
                    return Err(KktError::InconsistentRow { row, residual });
                }
            }
            let a = kept;
            let b = kept_b.iter().copied().collect();
            return Ok(Self { a, b });
        }
        Ok(Self { a, b })
    }

    /// No equality constraints on an `n`-dimensional variable.
    pub fn empty(n: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, n),
            b: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(x)).iter().copied().collect()
    }

    /// `|Ax - b|_inf`
    pub fn residual_inf(&self, x: &[f64]) -> f64 {
        let ax = self.apply(x);
        ax.iter()
            .zip(&self.b)
            .fold(0.0_f64, |m, (l, r)| m.max((l - r).abs()))
    }

    /// `|A|_F`
    pub fn scale(&self) -> f64 {
        self.a.norm()
    }
}

/// Output of [`solve_dual`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolveResult {
    pub lambda: Vec<f64>,
    /// `m + A^T lambda`
    pub residual: Vec<f64>,
    /// `|m + A^T lambda|_x^*`
    pub residual_dual_norm: f64,
    /// `H (m + A^T lambda)`, reused by the search direction.
    scaled_residual: Vec<f64>,
}

/// Computes `lambda = -(A H A^T)^{-1} A H m` at the interior point `x`.
pub fn solve_dual(
    constraints: &AffineConstraints,
    x: &InteriorPoint,
    m: &[f64],
) -> Result<DualSolveResult, KktError> {
    let n = x.dim();
    if m.len() != n || constraints.cols() != n {
        return Err(KktError::DimensionMismatch {
            expected: n,
            found: if m.len() != n { m.len() } else { constraints.cols() },
        });
    }
    let rows = constraints.rows();
    if m.iter().all(|&v| v == 0.0) {
        return Ok(DualSolveResult {
            lambda: vec![0.0; rows],
            residual: vec![0.0; n],
            residual_dual_norm: 0.0,
            scaled_residual: vec![0.0; n],
        });
    }

    let a = constraints.matrix();
    let mut lambda = vec![0.0; rows];
    if rows > 0 {
        // columns H a_i
        let mut ha = DMatrix::zeros(n, rows);
        let mut buf = vec![0.0; n];
        let mut ai = vec![0.0; n];
        for i in 0..rows {
            for (j, v) in ai.iter_mut().enumerate() {
                *v = a[(i, j)];
            }
            x.inverse_hessian_apply_into(&ai, &mut buf);
            ha.column_mut(i).copy_from_slice(&buf);
        }
        let mut gram = a * &ha;
        gram = (&gram + gram.transpose()) * 0.5;
        let rhs = -(ha.transpose() * DVector::from_column_slice(m));

        let chol = match Cholesky::new(gram.clone()) {
            Some(c) => c,
            None => {
                let jitter = 1e-12 * gram.trace() / rows as f64;
                let mut g = gram;
                for i in 0..rows {
                    g[(i, i)] += jitter;
                }
                Cholesky::new(g).ok_or(KktError::IllPosed {
                    condition: f64::INFINITY,
                })?
            }
        };
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let condition = (hi / lo).powi(2);
        if !(condition <= MAX_CONDITION) {
            return Err(KktError::IllPosed { condition });
        }
        lambda = chol.solve(&rhs).iter().copied().collect();
        // One step of iterative refinement on A H (m + A^T lambda) = 0.
        let (_, scaled) = residuals(a, x, m, &lambda);
        let correction = chol.solve(&-(a * DVector::from_column_slice(&scaled)));
        lambda.iter_mut().zip(correction.iter()).for_each(|(l, c)| *l += c);
    }

    let (residual, scaled_residual) = residuals(a, x, m, &lambda);
    let residual_dual_norm =
        crate::cones::quadratic_form_sqrt(&residual, &scaled_residual)?;
    Ok(DualSolveResult {
        lambda,
        residual,
        residual_dual_norm,
        scaled_residual,
    })
}

/// `r = m + A^T lambda` and `H r`.
fn residuals(a: &DMatrix<f64>, x: &InteriorPoint, m: &[f64], lambda: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut residual = m.to_vec();
    for (i, &l) in lambda.iter().enumerate() {
        for (j, r) in residual.iter_mut().enumerate() {
            *r += a[(i, j)] * l;
        }
    }
    let mut scaled = vec![0.0; residual.len()];
    x.inverse_hessian_apply_into(&residual, &mut scaled);
    (residual, scaled)
}

/// Unit-local-norm feasible direction `-H r / |r|_x^*`.
pub fn search_direction(dual: &DualSolveResult) -> Result<Vec<f64>, KktError> {
    let norm = dual.residual_dual_norm;
    if !(norm > STATIONARITY_FLOOR) {
        return Err(KktError::EstimatedStationary { norm });
    }
    Ok(dual.scaled_residual.iter().map(|v| -v / norm).collect())
}

/// The reported stationarity proxy `|r|_x^*`.
pub fn stationarity_measure(x: &InteriorPoint, residual: &[f64]) -> Result<f64, KktError> {
    Ok(x.dual_local_norm(residual)?)
}
