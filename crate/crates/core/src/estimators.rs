//! Stochastic gradient estimators and their step-size schedules.
//!
//! Four constructions of the running estimate `m_bar^k` of `grad f(x^k)`:
//!
//! * mini-batch: the mean of `|B_k|` i.i.d. component gradients at `x^k`;
//! * Polyak momentum: `(1 - g) m_bar^{k-1} + g G(x^k, xi^k)`;
//! * extrapolated momentum: the same recursion with the sample taken at
//!   `z^k = x^k + ((1 - g) / g)(x^k - x^{k-1})`;
//! * recursive momentum: `G(x^k, xi^k) + (1 - g)(m_bar^{k-1} - G(x^{k-1}, xi^k))`,
//!   one sample evaluated at two consecutive iterates.
//!
//! Here `g = gamma_{k-1}` with the conventions `gamma_{-1} = 1`,
//! `m_bar^{-1} = 0` and `x^{-1} = x^0`. The full-gradient baseline uses
//! `m_bar^k = grad f(x^k)`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cones::Cone;
use crate::problems::{Objective, OracleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("extrapolated point z^{k} left the cone interior; the schedule violates eta_k / gamma_k <= s_eta")]
    ExtrapolationExterior { k: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Which estimator drives the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Mini-batch with `|B_k| = initial + k * increment`; `(1, 1)` is the
    /// published `|B_k| = k + 1` schedule.
    Me { initial: usize, increment: usize },
    /// Mini-batch with a fixed batch size and the mini-batch step sizes.
    Me1 { batch: usize },
    Pm,
    Em,
    Rm,
    /// Deterministic baseline with the exact full gradient.
    Fg,
}

impl Variant {
    /// The published increasing-batch schedule.
    pub const ME: Variant = Variant::Me {
        initial: 1,
        increment: 1,
    };

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Me {
                initial: 1,
                increment: 1,
            } => "me",
            Variant::Me { .. } => "me+",
            Variant::Me1 { .. } => "me1",
            Variant::Pm => "pm",
            Variant::Em => "em",
            Variant::Rm => "rm",
            Variant::Fg => "fg",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Momentum parameter or sample count for one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Momentum {
    Gamma(f64),
    Batch(usize),
    FullBatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub eta: f64,
    pub momentum: Momentum,
    pub mu: f64,
}

impl ScheduleValues {
    /// `gamma_k`, or 1 for estimators without momentum.
    pub fn gamma(&self) -> f64 {
        match self.momentum {
            Momentum::Gamma(g) => g,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub variant: Variant,
    pub s_eta: f64,
    pub epsilon: f64,
    /// Barrier parameter of the problem's cone.
    pub theta: f64,
    /// Samples per momentum update (PM, EM, RM); 1 by default.
    pub momentum_batch: usize,
}

impl Schedule {
    pub fn new(variant: Variant, s_eta: f64, epsilon: f64, theta: f64) -> Result<Self, EstimatorError> {
        if !(s_eta > 0.0 && s_eta < 1.0) {
            return Err(EstimatorError::InvalidSchedule(format!("s_eta = {s_eta} not in (0, 1)")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(EstimatorError::InvalidSchedule(format!("epsilon = {epsilon} not in (0, 1)")));
        }
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(EstimatorError::InvalidSchedule(format!("theta = {theta}")));
        }
        match variant {
            Variant::Me { initial: 0, .. } => {
                return Err(EstimatorError::InvalidSchedule("initial batch must be positive".into()))
            }
            Variant::Me1 { batch: 0 } => {
                return Err(EstimatorError::InvalidSchedule("batch size must be positive".into()))
            }
            _ => {}
        }
        Ok(Self {
            variant,
            s_eta,
            epsilon,
            theta,
            momentum_batch: 1,
        })
    }

    /// Sets the mini-batch size used inside the momentum recursions.
    pub fn with_momentum_batch(mut self, batch: usize) -> Result<Self, EstimatorError> {
        if batch == 0 {
            return Err(EstimatorError::InvalidSchedule("momentum batch must be positive".into()));
        }
        self.momentum_batch = batch;
        Ok(self)
    }

    /// Lower limit `epsilon / (1 + sqrt(theta))` of the barrier parameter.
    pub fn mu_floor(&self) -> f64 {
        self.epsilon / (1.0 + self.theta.sqrt())
    }

    pub fn at(&self, k: usize) -> ScheduleValues {
        let kp = (k + 1) as f64;
        let s = self.s_eta;
        let floor = self.mu_floor();
        let (eta, momentum, mu_power) = match self.variant {
            Variant::Me { initial, increment } => (
                s / kp.sqrt(),
                Momentum::Batch(initial.saturating_add(k.saturating_mul(increment))),
                0.5,
            ),
            Variant::Me1 { batch } => (s / kp.sqrt(), Momentum::Batch(batch), 0.5),
            Variant::Fg => (s / kp.sqrt(), Momentum::FullBatch, 0.5),
            Variant::Pm => (s / kp.powf(0.75), Momentum::Gamma(1.0 / kp.sqrt()), 0.25),
            Variant::Em => (
                5.0 * s / (7.0 * kp.powf(5.0 / 7.0)),
                Momentum::Gamma(kp.powf(-4.0 / 7.0)),
                2.0 / 7.0,
            ),
            Variant::Rm => (
                s / (3.0 * kp.powf(2.0 / 3.0)),
                Momentum::Gamma(kp.powf(-2.0 / 3.0)),
                1.0 / 3.0,
            ),
        };
        ScheduleValues {
            eta,
            momentum,
            mu: kp.powf(-mu_power).max(floor),
        }
    }

    /// `alpha_k = 1 - (1 - gamma_k)/(1 - eta_k)`, evaluated as
    /// `(gamma_k - eta_k)/(1 - eta_k)`. Only defined for momentum variants.
    pub fn alpha(&self, k: usize) -> Option<f64> {
        let v = self.at(k);
        match v.momentum {
            Momentum::Gamma(g) => Some((g - v.eta) / (1.0 - v.eta)),
            _ => None,
        }
    }

    /// Potential weights `p_k` paired with the extrapolated and recursive
    /// momentum schedules.
    pub fn potential_weight(&self, k: usize) -> Option<f64> {
        let kp = (k + 1) as f64;
        match self.variant {
            Variant::Em => Some(kp.powf(1.0 / 7.0)),
            Variant::Rm => Some(kp.powf(1.0 / 3.0)),
            _ => None,
        }
    }

    /// Lower bound on `alpha_k` implied by the schedule.
    pub fn alpha_lower_bound(&self, k: usize) -> Option<f64> {
        let kp = (k + 1) as f64;
        let s = self.s_eta;
        match self.variant {
            Variant::Pm => Some((1.0 - s) / kp.sqrt()),
            Variant::Em => Some((1.0 - 5.0 * s / 7.0) / kp.powf(4.0 / 7.0)),
            Variant::Rm => Some((1.0 - s / 3.0) / kp.powf(2.0 / 3.0)),
            _ => None,
        }
    }
}

/// `m^k = m_bar^k + mu_k (m_bar^k + grad B(x^k))`
pub fn shift_with_barrier(m_bar: &[f64], mu: f64, grad_barrier: &[f64]) -> Vec<f64> {
    m_bar
        .iter()
        .zip(grad_barrier)
        .map(|(m, g)| (1.0 + mu) * m + mu * g)
        .collect()
}

/// Running estimator memory; single owner.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    m_bar: Vec<f64>,
    prev_x: Option<Vec<f64>>,
    gamma_prev: f64,
    k: usize,
    samples: u64,
    rng: ChaCha8Rng,
}

impl EstimatorState {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            m_bar: vec![0.0; dim],
            prev_x: None,
            gamma_prev: 1.0,
            k: 0,
            samples: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn m_bar(&self) -> &[f64] {
        &self.m_bar
    }

    /// Component-gradient evaluations consumed so far.
    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn prev_x(&self) -> Option<&[f64]> {
        self.prev_x.as_deref()
    }

    fn draw(&mut self, p: usize) -> usize {
        self.rng.gen_range(0..p)
    }

    /// Mini-batch mean of `batch` i.i.d. component gradients at `x`.
    pub fn update_me(
        &mut self,
        oracle: &dyn Objective,
        x: &[f64],
        batch: usize,
    ) -> Result<&[f64], EstimatorError> {
        let p = oracle.n_components();
        let idx: Vec<usize> = (0..batch.max(1)).map(|_| self.draw(p)).collect();
        self.m_bar = oracle.batch_gradient(&idx, x)?;
        self.samples += idx.len() as u64;
        self.k += 1;
        Ok(&self.m_bar)
    }

    /// Exact gradient; accounts for one full pass over the components.
    pub fn update_full(&mut self, oracle: &dyn Objective, x: &[f64]) -> Result<&[f64], EstimatorError> {
        self.m_bar = oracle.gradient(x)?;
        self.samples += oracle.n_components() as u64;
        self.k += 1;
        Ok(&self.m_bar)
    }

    fn draw_batch(&mut self, p: usize, batch: usize) -> Vec<usize> {
        (0..batch.max(1)).map(|_| self.draw(p)).collect()
    }

    /// Polyak momentum with a fresh sample (or mini-batch) at `x`.
    pub fn update_pm(
        &mut self,
        oracle: &dyn Objective,
        x: &[f64],
        gamma_prev: f64,
        batch: usize,
    ) -> Result<&[f64], EstimatorError> {
        let idx = self.draw_batch(oracle.n_components(), batch);
        let g = oracle.batch_gradient(&idx, x)?;
        self.samples += idx.len() as u64;
        for (m, gi) in self.m_bar.iter_mut().zip(&g) {
            *m = (1.0 - gamma_prev) * *m + gamma_prev * gi;
        }
        self.k += 1;
        Ok(&self.m_bar)
    }

    /// Extrapolated momentum; returns the extrapolation point `z^k`.
    pub fn update_em(
        &mut self,
        oracle: &dyn Objective,
        cone: &Cone,
        x: &[f64],
        x_prev: &[f64],
        gamma_prev: f64,
        batch: usize,
    ) -> Result<Vec<f64>, EstimatorError> {
        let c = (1.0 - gamma_prev) / gamma_prev;
        let z: Vec<f64> = x
            .iter()
            .zip(x_prev)
            .map(|(xi, pi)| xi + c * (xi - pi))
            .collect();
        if !cone.contains_interior(&z) {
            return Err(EstimatorError::ExtrapolationExterior { k: self.k });
        }
        let idx = self.draw_batch(oracle.n_components(), batch);
        let g = oracle.batch_gradient(&idx, &z)?;
        self.samples += idx.len() as u64;
        for (m, gi) in self.m_bar.iter_mut().zip(&g) {
            *m = (1.0 - gamma_prev) * *m + gamma_prev * gi;
        }
        self.k += 1;
        Ok(z)
    }

    /// Recursive momentum: the same samples at `x` and `x_prev`.
    pub fn update_rm(
        &mut self,
        oracle: &dyn Objective,
        x: &[f64],
        x_prev: &[f64],
        gamma_prev: f64,
        batch: usize,
    ) -> Result<&[f64], EstimatorError> {
        let idx = self.draw_batch(oracle.n_components(), batch);
        let g = oracle.batch_gradient(&idx, x)?;
        self.samples += idx.len() as u64;
        let keep = 1.0 - gamma_prev;
        if keep == 0.0 {
            self.m_bar = g;
        } else {
            let g_prev = oracle.batch_gradient(&idx, x_prev)?;
            self.samples += idx.len() as u64;
            for ((m, gi), gp) in self.m_bar.iter_mut().zip(&g).zip(&g_prev) {
                *m = gi + keep * (*m - gp);
            }
        }
        self.k += 1;
        Ok(&self.m_bar)
    }

    /// Runs the estimator selected by `schedule` at iterate `x^k` and
    /// records `x^k` and `gamma_k` for the next call.
    pub fn estimate(
        &mut self,
        schedule: &Schedule,
        values: &ScheduleValues,
        oracle: &dyn Objective,
        cone: &Cone,
        x: &[f64],
    ) -> Result<&[f64], EstimatorError> {
        let gamma_prev = self.gamma_prev;
        let x_prev = self.prev_x.take().unwrap_or_else(|| x.to_vec());
        match (schedule.variant, values.momentum) {
            (Variant::Fg, _) | (_, Momentum::FullBatch) => {
                self.update_full(oracle, x)?;
            }
            (_, Momentum::Batch(b)) => {
                self.update_me(oracle, x, b)?;
            }
            (Variant::Pm, _) => {
                self.update_pm(oracle, x, gamma_prev, schedule.momentum_batch)?;
            }
            (Variant::Em, _) => {
                self.update_em(oracle, cone, x, &x_prev, gamma_prev, schedule.momentum_batch)?;
            }
            (Variant::Rm, _) => {
                self.update_rm(oracle, x, &x_prev, gamma_prev, schedule.momentum_batch)?;
            }
            (v, m) => {
                return Err(EstimatorError::InvalidSchedule(format!(
                    "variant {v} cannot use {m:?}"
                )))
            }
        }
        self.gamma_prev = values.gamma();
        self.prev_x = Some(x.to_vec());
        Ok(&self.m_bar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Components `G_i(x) = x - c_i`, i.e. `f(x) = mean_i |x - c_i|^2 / 2`.
    struct Shifted {
        centers: Vec<Vec<f64>>,
    }

    impl Objective for Shifted {
        fn dim(&self) -> usize {
            self.centers[0].len()
        }
        fn n_components(&self) -> usize {
            self.centers.len()
        }
        fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
            Ok(self
                .centers
                .iter()
                .map(|c| c.iter().zip(x).map(|(a, b)| 0.5 * (b - a) * (b - a)).sum::<f64>())
                .sum::<f64>()
                / self.centers.len() as f64)
        }
        fn component_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>, OracleError> {
            Ok(x.iter().zip(&self.centers[i]).map(|(a, b)| a - b).collect())
        }
    }

    fn shifted() -> Shifted {
        Shifted {
            centers: vec![vec![1.0, 0.0], vec![-1.0, 2.0], vec![3.0, 1.0]],
        }
    }

    #[test]
    fn schedule_examples() {
        let rm = Schedule::new(Variant::Rm, 0.5, 0.1, 2.0).unwrap().at(0);
        assert_relative_eq!(rm.eta, 1.0 / 6.0, epsilon = 1e-15);
        assert_eq!(rm.momentum, Momentum::Gamma(1.0));
        assert_eq!(rm.mu, 1.0);

        let me = Schedule::new(Variant::ME, 0.9, 0.1, 4.0).unwrap();
        let v = me.at(3);
        assert_relative_eq!(v.eta, 0.45, epsilon = 1e-15);
        assert_eq!(v.momentum, Momentum::Batch(4));
        assert_eq!(v.mu, 0.5_f64.max(0.1 / 3.0));

        let em = Schedule::new(Variant::Em, 0.7, 0.1, 2.0).unwrap().at(0);
        assert_relative_eq!(em.eta, 0.5, epsilon = 1e-15);
        assert_eq!(em.gamma(), 1.0);
        assert!(em.eta / em.gamma() <= 0.7);

        let fg = Schedule::new(Variant::Fg, 0.5, 0.1, 2.0).unwrap().at(8);
        assert_eq!(fg.momentum, Momentum::FullBatch);
        assert_relative_eq!(fg.eta, 0.5 / 3.0, epsilon = 1e-15);

        let plus = Schedule::new(Variant::Me { initial: 10, increment: 10 }, 0.5, 0.1, 2.0).unwrap();
        assert_eq!(plus.at(2).momentum, Momentum::Batch(30));
    }

    #[test]
    fn mu_floor_binds_late() {
        let s = Schedule::new(Variant::Pm, 0.5, 0.3, 4.0).unwrap();
        assert!((s.at(10_000_000).mu - 0.1).abs() < 1e-15);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(Schedule::new(Variant::Pm, 1.0, 0.1, 1.0).is_err());
        assert!(Schedule::new(Variant::Pm, 0.5, 0.0, 1.0).is_err());
        assert!(Schedule::new(Variant::Me1 { batch: 0 }, 0.5, 0.1, 1.0).is_err());
    }

    #[test]
    fn shift_examples() {
        assert_eq!(shift_with_barrier(&[1.0, 0.0], 1.0, &[-1.0, -1.0]), vec![1.0, -1.0]);
        assert_eq!(shift_with_barrier(&[0.0, 0.0], 0.5, &[-2.0, 0.0]), vec![-1.0, 0.0]);
        let tiny = shift_with_barrier(&[2.0, 3.0], 1e-12, &[5.0, 5.0]);
        assert!((tiny[0] - 2.0).abs() < 1e-10 && (tiny[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn full_batch_mean_is_exact() {
        let o = shifted();
        let mut st = EstimatorState::new(2, 1);
        let x = [0.5, 0.5];
        st.update_full(&o, &x).unwrap();
        assert_eq!(st.m_bar(), o.gradient(&x).unwrap().as_slice());
        assert_eq!(st.samples(), 3);
    }

    #[test]
    fn single_sample_batch_is_a_component() {
        let o = shifted();
        let mut st = EstimatorState::new(2, 5);
        let x = [0.5, 0.5];
        st.update_me(&o, &x, 1).unwrap();
        let m = st.m_bar().to_vec();
        assert!((0..3).any(|i| o.component_gradient(i, &x).unwrap() == m));
    }

    #[test]
    fn polyak_first_step_and_convex_combination() {
        let o = shifted();
        let x = [0.5, 0.5];
        let mut st = EstimatorState::new(2, 3);
        st.update_pm(&o, &x, 1.0, 1).unwrap();
        let first = st.m_bar().to_vec();
        assert!((0..3).any(|i| o.component_gradient(i, &x).unwrap() == first));

        // gamma = 0.5, previous (2, 0), fresh sample (0, 2)
        struct Fixed;
        impl Objective for Fixed {
            fn dim(&self) -> usize {
                2
            }
            fn n_components(&self) -> usize {
                1
            }
            fn value(&self, _: &[f64]) -> Result<f64, OracleError> {
                Ok(0.0)
            }
            fn component_gradient(&self, _: usize, _: &[f64]) -> Result<Vec<f64>, OracleError> {
                Ok(vec![0.0, 2.0])
            }
        }
        let mut st = EstimatorState::new(2, 0);
        st.m_bar = vec![2.0, 0.0];
        st.update_pm(&Fixed, &x, 0.5, 1).unwrap();
        assert_eq!(st.m_bar(), &[1.0, 1.0]);
    }

    #[test]
    fn extrapolation_arithmetic() {
        let o = shifted();
        let cone = Cone::Orthant(2);
        let mut st = EstimatorState::new(2, 0);
        let z = st.update_em(&o, &cone, &[2.0, 2.0], &[1.0, 1.0], 0.5, 1).unwrap();
        assert_eq!(z, vec![3.0, 3.0]);
        // first step: z^0 = x^0
        let mut st = EstimatorState::new(2, 0);
        let z = st.update_em(&o, &cone, &[2.0, 2.0], &[2.0, 2.0], 1.0, 1).unwrap();
        assert_eq!(z, vec![2.0, 2.0]);
        // leaves the orthant
        let mut st = EstimatorState::new(2, 0);
        assert!(matches!(
            st.update_em(&o, &cone, &[0.5, 2.0], &[2.0, 2.0], 0.25, 1),
            Err(EstimatorError::ExtrapolationExterior { .. })
        ));
    }

    #[test]
    fn recursive_momentum_arithmetic() {
        // G(x, xi) = x for the single component; gamma = 0
        struct Identity;
        impl Objective for Identity {
            fn dim(&self) -> usize {
                2
            }
            fn n_components(&self) -> usize {
                1
            }
            fn value(&self, _: &[f64]) -> Result<f64, OracleError> {
                Ok(0.0)
            }
            fn component_gradient(&self, _: usize, x: &[f64]) -> Result<Vec<f64>, OracleError> {
                Ok(x.to_vec())
            }
        }
        let mut st = EstimatorState::new(2, 0);
        st.m_bar = vec![1.0, 0.0];
        st.update_rm(&Identity, &[3.0, 0.0], &[2.0, 0.0], 0.0, 1).unwrap();
        assert_eq!(st.m_bar(), &[2.0, 0.0]);
        assert_eq!(st.samples(), 2);
    }

    #[test]
    fn recursive_momentum_telescopes_with_exact_gradients() {
        // a single component makes G identical to grad f
        let o = Shifted {
            centers: vec![vec![1.0, -2.0]],
        };
        let mut st = EstimatorState::new(2, 0);
        st.update_rm(&o, &[0.3, 0.4], &[0.3, 0.4], 1.0, 1).unwrap();
        assert_eq!(st.m_bar(), o.gradient(&[0.3, 0.4]).unwrap().as_slice());
        st.update_rm(&o, &[1.5, 0.1], &[0.3, 0.4], 0.37, 1).unwrap();
        let exact = o.gradient(&[1.5, 0.1]).unwrap();
        for (a, b) in st.m_bar().iter().zip(&exact) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let o = shifted();
        let sched = Schedule::new(Variant::Rm, 0.5, 0.1, 2.0).unwrap();
        let cone = Cone::Free(2);
        let run = |seed| {
            let mut st = EstimatorState::new(2, seed);
            let mut out = Vec::new();
            for k in 0..50 {
                let x = [k as f64 * 0.01, 1.0 - k as f64 * 0.02];
                let v = sched.at(k);
                out.extend_from_slice(st.estimate(&sched, &v, &o, &cone, &x).unwrap());
            }
            out
        };
        let a = run(9);
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), run(9).iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_ne!(a, run(10));
    }
}
