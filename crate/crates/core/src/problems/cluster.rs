//! Clustering data streams through a semidefinite relaxation with a low-rank
//! promoting eigenvalue regularizer:
//!
//! ```text
//! min (1/p) sum_i <A_i, W> + tau sum_j ln(gamma + lambda_j(W))
//! s.t. W in S^d_+,  W e = e,  <I, W> = k
//! ```
//!
//! Each observation of the stream gives the positions of the same `d`
//! points; `A_i` is their squared-distance matrix. All `A_i` share one
//! scale factor so that their mean has unit mean off-diagonal entry.

use nalgebra::DMatrix;

use super::{ConicProblem, Objective, OracleError, ProblemError};
use crate::cones::Cone;
use crate::kkt::AffineConstraints;
use crate::linalg::{self, smat, svec, svec_len};

#[derive(Debug, Clone, PartialEq)]
pub struct StreamClusterData {
    /// One symmetric `d x d` matrix per observation.
    pub matrices: Vec<DMatrix<f64>>,
    pub k: usize,
    pub tau: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub tau: f64,
    pub gamma: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { tau: 0.1, gamma: 1.0 }
    }
}

/// Squared-distance matrix of the rows of `points`.
pub fn distance_matrix(points: &DMatrix<f64>) -> DMatrix<f64> {
    let d = points.nrows();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..i {
            let dist = (points.row(i) - points.row(j)).norm_squared();
            m[(i, j)] = dist;
            m[(j, i)] = dist;
        }
    }
    m
}

/// Mean off-diagonal entry of the mean of `mats`.
fn mean_off_diagonal(mats: &[DMatrix<f64>]) -> f64 {
    let d = mats[0].nrows();
    let total: f64 = mats.iter().map(|m| m.sum() - m.trace()).sum();
    total / (mats.len() * d * (d - 1)) as f64
}

impl StreamClusterData {
    pub fn new(matrices: Vec<DMatrix<f64>>, k: usize, params: ClusterParams) -> Result<Self, ProblemError> {
        let Some(first) = matrices.first() else {
            return Err(ProblemError::Data("no observations".into()));
        };
        let d = first.nrows();
        if !(2 <= k && k < d) {
            return Err(ProblemError::Data(format!("cluster count {k} must satisfy 2 <= k < {d}")));
        }
        for (i, a) in matrices.iter().enumerate() {
            if a.shape() != (d, d) {
                return Err(ProblemError::Data(format!("matrix {i} has shape {:?}", a.shape())));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(ProblemError::Data(format!("matrix {i} is not finite")));
            }
            if (a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
                return Err(ProblemError::Data(format!("matrix {i} is not symmetric")));
            }
        }
        if !(params.tau >= 0.0 && params.gamma > 0.0) {
            return Err(ProblemError::Data("need tau >= 0 and gamma > 0".into()));
        }
        Ok(Self {
            matrices,
            k,
            tau: params.tau,
            gamma: params.gamma,
        })
    }

    /// Builds `A_i` from each observation (`d x q` point coordinates),
    /// with the common scaling described in the module docs.
    pub fn from_observations(
        observations: &[DMatrix<f64>],
        k: usize,
        params: ClusterParams,
    ) -> Result<Self, ProblemError> {
        let Some(first) = observations.first() else {
            return Err(ProblemError::Data("no observations".into()));
        };
        if first.nrows() < 2 || observations.iter().any(|o| o.shape() != first.shape()) {
            return Err(ProblemError::Data("observations must list the same two or more points".into()));
        }
        let mats: Vec<DMatrix<f64>> = observations.iter().map(distance_matrix).collect();
        let scale = mean_off_diagonal(&mats);
        if !(scale > 1e-300 && scale.is_finite()) {
            return Err(ProblemError::Data("all points coincide in every observation".into()));
        }
        Self::new(mats.into_iter().map(|m| m / scale).collect(), k, params)
    }

    pub fn n_points(&self) -> usize {
        self.matrices[0].nrows()
    }
}

struct ClusterObjective {
    d: usize,
    /// `svec(A_i)`, concatenated.
    linear: Vec<f64>,
    p: usize,
    tau: f64,
    gamma: f64,
}

impl ClusterObjective {
    fn component(&self, i: usize) -> &[f64] {
        let len = svec_len(self.d);
        &self.linear[i * len..(i + 1) * len]
    }

    fn eigen(&self, x: &[f64]) -> Result<nalgebra::SymmetricEigen<f64, nalgebra::Dyn>, OracleError> {
        let w = smat(x, self.d);
        let eig = linalg::sym_eigen(&w);
        let lo = eig.eigenvalues[0];
        if !eig.eigenvalues.iter().all(|v| v.is_finite()) {
            return Err(OracleError::Numerical("eigendecomposition produced non-finite values".into()));
        }
        if lo + self.gamma <= 0.0 {
            let hi = eig.eigenvalues[self.d - 1];
            return Err(OracleError::Domain(format!(
                "gamma + lambda_min = {:e} (eigenvalue range [{lo:e}, {hi:e}])",
                lo + self.gamma
            )));
        }
        Ok(eig)
    }

    /// `svec(tau U diag(1 / (gamma + lambda)) U^T)`
    fn regularizer_gradient(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        if self.tau == 0.0 {
            return Ok(vec![0.0; x.len()]);
        }
        let eig = self.eigen(x)?;
        let g = linalg::spectral_apply(&eig, |l| self.tau / (self.gamma + l));
        Ok(svec(&g))
    }
}

impl Objective for ClusterObjective {
    fn dim(&self) -> usize {
        svec_len(self.d)
    }

    fn n_components(&self) -> usize {
        self.p
    }

    fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        let lin: f64 = (0..self.p).map(|i| linalg::dot(self.component(i), x)).sum::<f64>() / self.p as f64;
        if self.tau == 0.0 {
            return Ok(lin);
        }
        let eig = self.eigen(x)?;
        let reg: f64 = eig.eigenvalues.iter().map(|l| (self.gamma + l).ln()).sum();
        Ok(lin + self.tau * reg)
    }

    fn component_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let mut g = self.regularizer_gradient(x)?;
        linalg::axpy(1.0, self.component(i), &mut g);
        Ok(g)
    }

    /// One eigendecomposition per batch.
    fn batch_gradient(&self, idx: &[usize], x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let mut g = self.regularizer_gradient(x)?;
        let scale = 1.0 / idx.len().max(1) as f64;
        for &i in idx {
            linalg::axpy(scale, self.component(i), &mut g);
        }
        Ok(g)
    }
}

/// Initial point: diagonal `k/d`, off-diagonal `(d-k)/(d(d-1))`.
pub fn cluster_initial_point(d: usize, k: usize) -> DMatrix<f64> {
    let off = (d - k) as f64 / (d * (d - 1)) as f64;
    let mut w = DMatrix::from_element(d, d, off);
    w.fill_diagonal(k as f64 / d as f64);
    w
}

pub fn stream_cluster(data: &StreamClusterData) -> Result<ConicProblem, ProblemError> {
    let d = data.n_points();
    let n = svec_len(d);
    let mut a = DMatrix::zeros(d + 1, n);
    // <(e_i e^T + e e_i^T)/2, W> = (W e)_i
    for i in 0..d {
        let mut e = DMatrix::zeros(d, d);
        for j in 0..d {
            e[(i, j)] += 0.5;
            e[(j, i)] += 0.5;
        }
        a.row_mut(i).copy_from_slice(&svec(&e));
    }
    a.row_mut(d).copy_from_slice(&svec(&DMatrix::identity(d, d)));
    let mut b = vec![1.0; d + 1];
    b[d] = data.k as f64;
    let constraints = AffineConstraints::deflated(a, b)?;

    let x0 = svec(&cluster_initial_point(d, data.k));
    let mut linear = Vec::with_capacity(n * data.matrices.len());
    for m in &data.matrices {
        linear.extend(svec(m));
    }
    let objective = ClusterObjective {
        d,
        linear,
        p: data.matrices.len(),
        tau: data.tau,
        gamma: data.gamma,
    };
    ConicProblem::new("cluster", Cone::Psd(d), constraints, x0, Box::new(objective))
}

/// Spectral rounding: embeds each point through the top `k` eigenpairs of
/// `W` and groups the embeddings with Lloyd's algorithm from a farthest-point
/// seeding. Labels are numbered in order of first appearance.
pub fn round_labels(w: &DMatrix<f64>, k: usize) -> Vec<usize> {
    let d = w.nrows();
    let eig = linalg::sym_eigen(w);
    let emb: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (d - k..d)
                .map(|j| eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt())
                .collect()
        })
        .collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let mut centers = vec![emb[0].clone()];
    while centers.len() < k {
        let far = (0..d)
            .max_by(|&i, &j| {
                let di = centers.iter().map(|c| dist(&emb[i], c)).fold(f64::INFINITY, f64::min);
                let dj = centers.iter().map(|c| dist(&emb[j], c)).fold(f64::INFINITY, f64::min);
                di.total_cmp(&dj)
            })
            .unwrap_or(0);
        centers.push(emb[far].clone());
    }
    let mut labels = vec![0; d];
    for _ in 0..100 {
        let next: Vec<usize> = emb
            .iter()
            .map(|e| {
                (0..k)
                    .min_by(|&a, &b| dist(e, &centers[a]).total_cmp(&dist(e, &centers[b])))
                    .unwrap_or(0)
            })
            .collect();
        let changed = next != labels;
        labels = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = emb.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(e, _)| e).collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    canonical_labels(&labels)
}

/// Renumbers labels in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(d: usize, k: usize) -> StreamClusterData {
        let obs: Vec<DMatrix<f64>> = (0..3)
            .map(|s| DMatrix::from_fn(d, 2, |i, j| ((i * 7 + j * 3 + s) % 11) as f64 + 0.1 * i as f64))
            .collect();
        StreamClusterData::from_observations(&obs, k, ClusterParams::default()).unwrap()
    }

    #[test]
    fn initial_point_row_sums_and_trace() {
        for (d, k) in [(5, 2), (30, 3), (8, 7)] {
            let w = cluster_initial_point(d, k);
            for i in 0..d {
                assert!((w.row(i).sum() - 1.0).abs() < 1e-14);
            }
            assert!((w.trace() - k as f64).abs() < 1e-13);
        }
        let prob = stream_cluster(&data(6, 2)).unwrap();
        assert_eq!(prob.constraints.rows(), 7);
        assert!(prob.constraints.residual_inf(&prob.x0) < 1e-14);
    }

    #[test]
    fn regularizer_gradient_at_identity() {
        let obj = ClusterObjective {
            d: 4,
            linear: vec![0.0; 10],
            p: 1,
            tau: 0.3,
            gamma: 0.5,
        };
        let g = smat(&obj.regularizer_gradient(&svec(&DMatrix::identity(4, 4))).unwrap(), 4);
        let expected = DMatrix::<f64>::identity(4, 4) * (0.3 / 1.5);
        assert!((g - expected).amax() < 1e-14);
    }

    #[test]
    fn linear_term_is_component_mean() {
        let data = data(5, 2);
        let prob = stream_cluster(&data).unwrap();
        let full = prob.objective.gradient(&prob.x0).unwrap();
        let reg = {
            let obj = ClusterObjective {
                d: 5,
                linear: vec![],
                p: 0,
                tau: data.tau,
                gamma: data.gamma,
            };
            obj.regularizer_gradient(&prob.x0).unwrap()
        };
        let mut mean = DMatrix::zeros(5, 5);
        for a in &data.matrices {
            mean += a / data.matrices.len() as f64;
        }
        let lin: Vec<f64> = full.iter().zip(&reg).map(|(f, r)| f - r).collect();
        for (a, b) in lin.iter().zip(svec(&mean)) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn observations_share_one_scale() {
        let a = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        let b = &a * 2.0;
        // squared distances 1, 9, 4 and 4, 36, 16: overall mean 70/6
        let data = StreamClusterData::from_observations(&[a, b], 2, ClusterParams::default()).unwrap();
        assert!((data.matrices[0][(0, 1)] - 6.0 / 70.0).abs() < 1e-15);
        assert!((data.matrices[1][(0, 2)] - 36.0 * 6.0 / 70.0).abs() < 1e-14);
        assert_eq!(data.matrices[1][(1, 1)], 0.0);
        let flat = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        assert!(StreamClusterData::from_observations(&[flat], 2, ClusterParams::default()).is_err());
    }

    #[test]
    fn rounding_recovers_block_structure() {
        let planted = [2, 0, 1, 0, 2, 1, 1, 0];
        let sizes = [3.0, 3.0, 2.0];
        let w = DMatrix::from_fn(8, 8, |i, j| {
            if planted[i] == planted[j] {
                1.0 / sizes[planted[i]]
            } else {
                0.0
            }
        });
        assert_eq!(round_labels(&w, 3), canonical_labels(&planted));
    }

    #[test]
    fn rejects_bad_cluster_count() {
        let m = vec![DMatrix::zeros(3, 3)];
        assert!(StreamClusterData::new(m.clone(), 3, ClusterParams::default()).is_err());
        assert!(StreamClusterData::new(m, 1, ClusterParams::default()).is_err());
    }
}
