use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sipm_core::audit::{random_feasible_point, small_problems};
use sipm_core::estimators::EstimatorState;
use sipm_core::problems::{Objective, OracleError};

/// Per-coordinate sample mean and variance of `n` mini-batch estimates.
fn batch_moments(oracle: &dyn Objective, x: &[f64], batch: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let dim = x.len();
    let mut est = EstimatorState::new(dim, seed);
    let (mut sum, mut sq) = (vec![0.0; dim], vec![0.0; dim]);
    for _ in 0..n {
        let g = est.update_me(oracle, x, batch).unwrap();
        for j in 0..dim {
            sum[j] += g[j];
            sq[j] += g[j] * g[j];
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let var = sq.iter().zip(&mean).map(|(q, m)| ((q / nf - m * m) * nf / (nf - 1.0)).max(0.0)).collect();
    (mean, var)
}

#[test]
fn mini_batch_mean_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for problem in small_problems(6) {
        let x = random_feasible_point(&problem, 0.3, &mut rng);
        let exact = problem.objective.gradient(&x).unwrap();
        let n = 10_000;
        let (mean, var) = batch_moments(problem.objective.as_ref(), &x, 4, n, 2);
        for j in 0..x.len() {
            let se = (var[j] / n as f64).sqrt();
            assert!(
                (mean[j] - exact[j]).abs() <= 4.0 * se + 1e-10 * (1.0 + exact[j].abs()),
                "{} coordinate {j}: {} vs {} (se {se})",
                problem.name,
                mean[j],
                exact[j]
            );
        }
    }
}

#[test]
fn mini_batch_variance_scales_inversely_with_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for problem in small_problems(7) {
        let x = random_feasible_point(&problem, 0.3, &mut rng);
        let total = |b| batch_moments(problem.objective.as_ref(), &x, b, 10_000, 4).1.iter().sum::<f64>();
        let (v1, v8) = (total(1), total(8));
        let ratio = v1 / v8;
        assert!((4.0..=16.0).contains(&ratio), "{}: ratio {ratio}", problem.name);
    }
}

/// `f(x) = sum_j (j + 1) x_j^2 / 2`, every component identical.
struct Deterministic;

impl Objective for Deterministic {
    fn dim(&self) -> usize {
        3
    }
    fn n_components(&self) -> usize {
        4
    }
    fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        Ok(x.iter().enumerate().map(|(j, v)| (j + 1) as f64 * v * v / 2.0).sum())
    }
    fn component_gradient(&self, _: usize, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        Ok(x.iter().enumerate().map(|(j, v)| (j + 1) as f64 * v).collect())
    }
}

#[test]
fn recursive_momentum_tracks_a_deterministic_gradient() {
    let oracle = Deterministic;
    let x0 = [1.0, -2.0, 0.5];
    let x1 = [0.7, -1.1, 0.9];
    let mut est = EstimatorState::new(3, 0);
    est.update_rm(&oracle, &x0, &x0, 1.0, 1).unwrap();
    let m = est.update_rm(&oracle, &x1, &x0, 0.3, 1).unwrap().to_vec();
    let exact = oracle.gradient(&x1).unwrap();
    for (a, b) in m.iter().zip(&exact) {
        assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()), "{a} vs {b}");
    }
}
