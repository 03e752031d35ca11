//! Seeded synthetic datasets for the three problem families.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};

use super::cluster::{ClusterParams, StreamClusterData};
use super::multitask::{MultiTaskData, TaskData};
use super::robust::{RobustParams, RobustRegressionData};
use super::ProblemError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSpec {
    pub d: usize,
    pub p: usize,
    /// Scale of the Student-t label noise; zero gives exact labels.
    pub noise_scale: f64,
    pub noise_dof: f64,
    /// Delete 25% of the features in half of the samples and impute them by
    /// least squares on the observed features.
    pub missing: bool,
}

impl RegressionSpec {
    pub fn new(d: usize, p: usize) -> Self {
        Self {
            d,
            p,
            noise_scale: 1.0,
            noise_dof: 3.0,
            missing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRegression {
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    pub w_star: Vec<f64>,
}

impl SyntheticRegression {
    pub fn into_data(self, params: RobustParams) -> Result<RobustRegressionData, ProblemError> {
        RobustRegressionData::new(self.features, self.labels, params)
    }
}

fn check_dims(dims: &[usize]) -> Result<(), ProblemError> {
    if dims.contains(&0) {
        return Err(ProblemError::Data("dimensions must be positive".into()));
    }
    Ok(())
}

/// Gaussian features, `w* ~ N(0, I/d)` and heavy-tailed label noise.
pub fn regression(spec: &RegressionSpec, seed: u64) -> Result<SyntheticRegression, ProblemError> {
    check_dims(&[spec.d, spec.p])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, p) = (spec.d, spec.p);
    let sd = (1.0 / d as f64).sqrt();
    let w_star: Vec<f64> = (0..d).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut features = DMatrix::from_fn(p, d, |_, _| 0.0);
    for i in 0..p {
        for j in 0..d {
            features[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let noise = StudentT::new(spec.noise_dof).map_err(|e| ProblemError::Data(e.to_string()))?;
    let labels: Vec<f64> = (0..p)
        .map(|i| {
            let clean: f64 = features.row(i).iter().zip(&w_star).map(|(a, w)| a * w).sum();
            let eps: f64 = noise.sample(&mut rng);
            clean + spec.noise_scale * eps
        })
        .collect();
    if spec.missing {
        impute_missing(&mut features, &mut rng)?;
    }
    Ok(SyntheticRegression {
        features,
        labels,
        w_star,
    })
}

/// Deletes a quarter of the features in half of the rows, then fills each
/// hole with a least-squares prediction from that row's observed features,
/// fitted on the untouched rows. Fits are cached per missing pattern.
fn impute_missing(features: &mut DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<(), ProblemError> {
    let (p, d) = features.shape();
    let n_missing = d / 4;
    if n_missing == 0 {
        return Ok(());
    }
    let mut rows: Vec<usize> = (0..p).collect();
    rows.shuffle(rng);
    let (damaged, complete) = rows.split_at(p / 2);
    if complete.len() <= d {
        return Err(ProblemError::Data("too few complete rows to impute missing features".into()));
    }
    let mut cols: Vec<usize> = (0..d).collect();
    let mut fits: HashMap<Vec<usize>, DMatrix<f64>> = HashMap::new();
    for &i in damaged {
        cols.shuffle(rng);
        let mut missing = cols[..n_missing].to_vec();
        missing.sort_unstable();
        let observed: Vec<usize> = (0..d).filter(|j| !missing.contains(j)).collect();
        let coef = match fits.get(&missing) {
            Some(c) => c.clone(),
            None => {
                // [1, X_O] B = X_M over the complete rows.
                let design = DMatrix::from_fn(complete.len(), observed.len() + 1, |r, c| {
                    if c == 0 {
                        1.0
                    } else {
                        features[(complete[r], observed[c - 1])]
                    }
                });
                let target = DMatrix::from_fn(complete.len(), missing.len(), |r, c| features[(complete[r], missing[c])]);
                let c = design
                    .svd(true, true)
                    .solve(&target, 1e-12)
                    .map_err(|e| ProblemError::Data(format!("imputation fit failed: {e}")))?;
                fits.insert(missing.clone(), c.clone());
                c
            }
        };
        let mut row = DVector::zeros(observed.len() + 1);
        row[0] = 1.0;
        for (c, &j) in observed.iter().enumerate() {
            row[c + 1] = features[(i, j)];
        }
        let pred = coef.transpose() * row;
        for (c, &j) in missing.iter().enumerate() {
            features[(i, j)] = pred[c];
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiTaskSpec {
    pub tasks: usize,
    pub samples_per_task: usize,
    pub d: usize,
    pub noise_scale: f64,
    pub lambda: f64,
}

impl MultiTaskSpec {
    pub fn new(tasks: usize, samples_per_task: usize, d: usize) -> Self {
        Self {
            tasks,
            samples_per_task,
            d,
            noise_scale: 0.1,
            lambda: 0.01,
        }
    }
}

/// Task models share a common component: `w_t = w_0 + 0.5 delta_t`.
pub fn multitask(spec: &MultiTaskSpec, seed: u64) -> Result<MultiTaskData, ProblemError> {
    check_dims(&[spec.tasks, spec.samples_per_task, spec.d])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.d;
    let sd = (1.0 / d as f64).sqrt();
    let shared: Vec<f64> = (0..d).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let noise = StudentT::new(3.0).map_err(|e| ProblemError::Data(e.to_string()))?;
    let tasks = (0..spec.tasks)
        .map(|_| {
            let w: Vec<f64> = shared
                .iter()
                .map(|s| s + 0.5 * sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let features = DMatrix::from_fn(spec.samples_per_task, d, |_, _| rng.sample(StandardNormal));
            let targets = (0..spec.samples_per_task)
                .map(|i| {
                    let clean: f64 = features.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
                    let eps: f64 = noise.sample(&mut rng);
                    clean + spec.noise_scale * eps
                })
                .collect();
            TaskData { features, targets }
        })
        .collect();
    MultiTaskData::new(tasks, spec.lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSpec {
    /// Points to cluster.
    pub d: usize,
    pub k: usize,
    /// Observations in the stream.
    pub p: usize,
    /// Coordinates per point.
    pub q: usize,
    /// Distance between neighbouring cluster means, in units of the
    /// within-cluster spread.
    pub separation: f64,
    /// Per-observation positional noise.
    pub jitter: f64,
}

impl ClusterSpec {
    pub fn new(d: usize, k: usize, p: usize) -> Self {
        Self {
            d,
            k,
            p,
            q: 2,
            separation: 6.0,
            jitter: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCluster {
    /// `d x q` positions, one matrix per observation.
    pub observations: Vec<DMatrix<f64>>,
    pub labels: Vec<usize>,
}

impl SyntheticCluster {
    pub fn into_data(self, k: usize, params: ClusterParams) -> Result<StreamClusterData, ProblemError> {
        StreamClusterData::from_observations(&self.observations, k, params)
    }
}

/// Gaussian mixture of `d` points whose means lie evenly spaced on a random
/// line, so the top principal direction separates the clusters. In every observation each position is
/// rescaled by its own `1 + eps`, `eps ~ N(0, 1)`, and jittered. The drift
/// only adds `|x_i|^2 + |x_j|^2` to the expected squared distance, which is
/// constant on the feasible set because `W e = e`.
pub fn cluster(spec: &ClusterSpec, seed: u64) -> Result<SyntheticCluster, ProblemError> {
    check_dims(&[spec.d, spec.k, spec.p, spec.q])?;
    if spec.k >= spec.d {
        return Err(ProblemError::Data("need fewer clusters than points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..spec.q).map(|_| rng.sample(StandardNormal)).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= len);
    let offset = (spec.k - 1) as f64 / 2.0;
    let means = DMatrix::from_fn(spec.k, spec.q, |c, j| (c as f64 - offset) * spec.separation * dir[j]);
    let mut labels: Vec<usize> = (0..spec.d).map(|i| i % spec.k).collect();
    labels.shuffle(&mut rng);
    let base = DMatrix::from_fn(spec.d, spec.q, |i, j| means[(labels[i], j)] + rng.sample::<f64, _>(StandardNormal));
    let jitter = Normal::new(0.0, spec.jitter).map_err(|e| ProblemError::Data(e.to_string()))?;
    let observations = (0..spec.p)
        .map(|_| {
            let drift: Vec<f64> = (0..spec.d).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)).collect();
            DMatrix::from_fn(spec.d, spec.q, |i, j| drift[i] * base[(i, j)] + jitter.sample(&mut rng))
        })
        .collect();
    Ok(SyntheticCluster { observations, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(m: &DMatrix<f64>) -> Vec<u64> {
        m.iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = RegressionSpec { missing: true, ..RegressionSpec::new(8, 100) };
        let a = regression(&spec, 3).unwrap();
        let b = regression(&spec, 3).unwrap();
        assert_eq!(bits(&a.features), bits(&b.features));
        assert_eq!(
            a.labels.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.labels.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let c = regression(&spec, 4).unwrap();
        assert_ne!(bits(&a.features), bits(&c.features));

        let ca = cluster(&ClusterSpec::new(10, 2, 5), 1).unwrap();
        let cb = cluster(&ClusterSpec::new(10, 2, 5), 1).unwrap();
        assert_eq!(ca, cb);
        let ma = multitask(&MultiTaskSpec::new(3, 10, 4), 9).unwrap();
        assert_eq!(ma, multitask(&MultiTaskSpec::new(3, 10, 4), 9).unwrap());
    }

    #[test]
    fn noiseless_least_squares_recovers_planted_model() {
        let spec = RegressionSpec {
            noise_scale: 0.0,
            ..RegressionSpec::new(10, 200)
        };
        let s = regression(&spec, 11).unwrap();
        // Normal equations, solved independently of the generator.
        let x = &s.features;
        let y = DVector::from_vec(s.labels.clone());
        let w = (x.transpose() * x).cholesky().unwrap().solve(&(x.transpose() * y));
        for (a, b) in w.iter().zip(&s.w_star) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn missing_values_are_filled() {
        let spec = RegressionSpec { missing: true, ..RegressionSpec::new(8, 200) };
        let with = regression(&spec, 5).unwrap();
        let without = regression(&RegressionSpec::new(8, 200), 5).unwrap();
        assert!(with.features.iter().all(|v| v.is_finite()));
        let changed = with
            .features
            .row_iter()
            .zip(without.features.row_iter())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 100);
    }

    #[test]
    fn cluster_labels_are_balanced() {
        let s = cluster(&ClusterSpec::new(30, 3, 4), 2).unwrap();
        for c in 0..3 {
            assert_eq!(s.labels.iter().filter(|&&l| l == c).count(), 10);
        }
        assert_eq!(s.observations.len(), 4);
    }
}
