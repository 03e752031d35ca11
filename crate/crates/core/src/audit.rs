//! Randomized invariant suites over the cone, KKT, schedule and problem
//! layers. Each suite returns a [`SuiteReport`] instead of panicking so the
//! command-line checker can print counts.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cones::{Cone, InteriorPoint};
use crate::estimators::{Momentum, Schedule, Variant};
use crate::kkt::{self, AffineConstraints};
use crate::linalg::{self, svec, sym_sqrt};
use crate::problems::{self, synth, ConicProblem};

/// Keep at most this many failure descriptions per suite.
const MAX_EXAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub checked: usize,
    pub failed: usize,
    /// The first failing cases with their inputs.
    pub examples: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checked: 0,
            failed: 0,
            examples: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failed == 0
    }

    fn check(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.failed += 1;
            if self.examples.len() < MAX_EXAMPLES {
                self.examples.push(describe());
            }
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<11} {} checks, {} failed", self.name, self.checked, self.failed)?;
        if let Some(first) = self.examples.first() {
            write!(f, "; first: {first}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub seed: u64,
    /// Last iteration index of the schedule sweep.
    pub kmax: usize,
    /// Test hook: multiplies every Hessian product by `1 + perturb_hessian`.
    pub perturb_hessian: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            seed: 20240531,
            kmax: 1_000_000,
            perturb_hessian: 0.0,
        }
    }
}

pub const SUITES: [&str; 5] = ["barrier", "dikin", "kkt", "schedules", "finite-sum"];

pub fn run_suite(name: &str, config: &AuditConfig) -> Option<SuiteReport> {
    Some(match name {
        "barrier" => barrier_suite(config),
        "dikin" => dikin_suite(config),
        "kkt" => kkt_suite(config),
        "schedules" => schedule_suite(config),
        "finite-sum" => finite_sum_suite(config),
        _ => return None,
    })
}

/// The cones every barrier-level suite runs over.
pub fn audit_cones() -> Vec<Cone> {
    vec![
        Cone::Orthant(20),
        Cone::SecondOrder(20),
        Cone::Psd(10),
        Cone::Product(vec![Cone::Orthant(3), Cone::SecondOrder(4), Cone::Psd(3)]),
    ]
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// A random interior point with moderate distance to the boundary.
pub fn random_interior(cone: &Cone, rng: &mut impl Rng) -> Vec<f64> {
    match cone {
        Cone::Orthant(n) => (0..*n).map(|_| rng.sample::<f64, _>(StandardNormal).exp()).collect(),
        Cone::Free(n) => gaussian(rng, *n),
        Cone::SecondOrder(d) => {
            let mut x = gaussian(rng, *d);
            let t = linalg::norm2(&x) + rng.sample::<f64, _>(StandardNormal).exp();
            x.push(t);
            x
        }
        Cone::Psd(d) => {
            let b = DMatrix::from_fn(*d, *d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &b * b.transpose() / *d as f64 + DMatrix::identity(*d, *d) * 0.1;
            svec(&x)
        }
        Cone::Product(blocks) => blocks.iter().flat_map(|c| random_interior(c, rng)).collect(),
    }
}

/// A random direction with `|v|_x = r`.
pub fn random_direction(x: &InteriorPoint, r: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut v = gaussian(rng, x.dim());
    let norm = x.local_norm(&v).unwrap_or(1.0);
    v.iter_mut().for_each(|e| *e *= r / norm);
    v
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    linalg::norm2(&diff) / linalg::norm2(b).max(1.0)
}

/// Barrier identities, logarithmic homogeneity and finite-difference
/// checks of the gradient and Hessian product.
pub fn barrier_suite(config: &AuditConfig) -> SuiteReport {
    let mut rep = SuiteReport::new("barrier");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = 1.0 + config.perturb_hessian;
    for cone in audit_cones() {
        let theta = cone.complexity_parameter();
        for _ in 0..100 {
            let xv = random_interior(&cone, &mut rng);
            let Ok(x) = cone.point(xv.clone()) else {
                rep.check(false, || format!("{cone:?}: generator produced exterior point {xv:?}"));
                continue;
            };
            let g = x.barrier_gradient();
            let hinv_g = x.inverse_hessian_apply(&g).unwrap_or_default();
            let hx: Vec<f64> = x.hessian_apply(&xv).unwrap_or_default().iter().map(|v| v * scale).collect();
            let checks = [
                ("|grad B|*^2", linalg::dot(&g, &hinv_g)),
                ("-x^T grad B", -linalg::dot(&xv, &g)),
                ("|x|_x^2", linalg::dot(&xv, &hx)),
            ];
            for (what, value) in checks {
                rep.check((value - theta).abs() <= 1e-8 * theta, || {
                    format!("{cone:?}: {what} = {value} vs theta = {theta} at x = {xv:?}")
                });
            }

            // B(t x) = B(x) - theta ln t
            let t = 0.5 + rng.gen::<f64>() * 2.0;
            let tx: Vec<f64> = xv.iter().map(|v| v * t).collect();
            let lhs = cone.barrier_value(&tx).unwrap_or(f64::NAN);
            let rhs = x.barrier_value() - theta * t.ln();
            rep.check((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()), || {
                format!("{cone:?}: B(tx) = {lhs} vs {rhs} at t = {t}")
            });

            let h = 1e-6 * (1.0 + linalg::norm2(&xv));
            let shifted = |v: &[f64], s: f64| -> Vec<f64> { xv.iter().zip(v).map(|(a, b)| a + s * b).collect() };
            let mut fd = vec![0.0; xv.len()];
            for (j, fj) in fd.iter_mut().enumerate() {
                let mut e = vec![0.0; xv.len()];
                e[j] = 1.0;
                let up = cone.barrier_value(&shifted(&e, h)).unwrap_or(f64::NAN);
                let dn = cone.barrier_value(&shifted(&e, -h)).unwrap_or(f64::NAN);
                *fj = (up - dn) / (2.0 * h);
            }
            let err = rel_err(&fd, &g);
            rep.check(err <= 1e-5, || format!("{cone:?}: gradient finite-difference error {err:e}"));

            let v = gaussian(&mut rng, xv.len());
            let gu = cone.barrier_gradient(&shifted(&v, h)).unwrap_or_default();
            let gd = cone.barrier_gradient(&shifted(&v, -h)).unwrap_or_default();
            let fd: Vec<f64> = gu.iter().zip(&gd).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let hv: Vec<f64> = x.hessian_apply(&v).unwrap_or_default().iter().map(|e| e * scale).collect();
            let err = if fd.len() == hv.len() { rel_err(&fd, &hv) } else { f64::INFINITY };
            rep.check(err <= 1e-5, || format!("{cone:?}: Hessian finite-difference error {err:e}"));
        }
    }
    rep
}

/// Dikin-ellipsoid containment, the local-norm sandwich and the local
/// Lipschitz bound on the barrier gradient.
pub fn dikin_suite(config: &AuditConfig) -> SuiteReport {
    let mut rep = SuiteReport::new("dikin");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd1c1);
    const SLACK: f64 = 1e-10;
    for cone in audit_cones() {
        for &r in &[0.1, 0.5, 0.9, 0.999] {
            for _ in 0..1000 {
                let x = cone.point(random_interior(&cone, &mut rng)).expect("generator is interior");
                let step = random_direction(&x, r, &mut rng);
                let yv: Vec<f64> = x.as_slice().iter().zip(&step).map(|(a, b)| a + b).collect();
                let inside = cone.contains_interior(&yv);
                rep.check(inside, || format!("{cone:?}: x + v exterior with |v|_x = {r}"));
                let Ok(y) = cone.point(yv) else { continue };

                let v = gaussian(&mut rng, x.dim());
                let nx = x.dual_local_norm(&v).unwrap_or(f64::NAN);
                let ny = y.dual_local_norm(&v).unwrap_or(f64::NAN);
                let ok = (1.0 - r) * nx <= ny * (1.0 + SLACK) && ny <= nx / (1.0 - r) * (1.0 + SLACK);
                rep.check(ok, || {
                    format!("{cone:?}: |v|*_y = {ny} outside [{}, {}] at r = {r}", (1.0 - r) * nx, nx / (1.0 - r))
                });

                let dg: Vec<f64> = y
                    .barrier_gradient()
                    .iter()
                    .zip(x.barrier_gradient())
                    .map(|(a, b)| a - b)
                    .collect();
                let lhs = x.dual_local_norm(&dg).unwrap_or(f64::NAN);
                let bound = r / (1.0 - r);
                rep.check(lhs <= bound * (1.0 + SLACK), || {
                    format!("{cone:?}: |grad B(y) - grad B(x)|*_x = {lhs} > {bound} at r = {r}")
                });
            }
        }
    }
    rep
}

/// Small random KKT instance: `(cone, A, x, m)`.
pub fn random_kkt_instance(rng: &mut impl Rng) -> (Cone, DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let cone = match rng.gen_range(0..4) {
        0 => Cone::Orthant(rng.gen_range(1..=12)),
        1 => Cone::SecondOrder(rng.gen_range(1..=11)),
        2 => Cone::Psd(rng.gen_range(1..=4)),
        _ => Cone::Product(vec![Cone::Orthant(rng.gen_range(1..=4)), Cone::SecondOrder(rng.gen_range(1..=3)), Cone::Psd(2)]),
    };
    let n = cone.dim();
    let m = rng.gen_range(1..=n.min(5));
    let a = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = random_interior(&cone, rng);
    let g = gaussian(rng, n);
    (cone, a, x, g)
}

/// Null-space residual and multiplier optimality against a dense
/// weighted least-squares solve.
pub fn kkt_suite(config: &AuditConfig) -> SuiteReport {
    let mut rep = SuiteReport::new("kkt");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6b6b);
    for case in 0..200 {
        let (cone, a, xv, m) = random_kkt_instance(&mut rng);
        let n = xv.len();
        let x = cone.point(xv.clone()).expect("generator is interior");
        let b = &a * nalgebra::DVector::from_column_slice(&xv);
        let Ok(cons) = AffineConstraints::new(a.clone(), b.as_slice().to_vec()) else {
            // Gaussian matrices are full rank with probability one.
            rep.check(false, || format!("case {case}: rank check rejected a Gaussian matrix"));
            continue;
        };
        let dual = match kkt::solve_dual(&cons, &x, &m) {
            Ok(d) => d,
            Err(e) => {
                rep.check(false, || format!("case {case}: {e}"));
                continue;
            }
        };
        let hr = x.inverse_hessian_apply(&dual.residual).unwrap_or_default();
        let ahr = &a * nalgebra::DVector::from_column_slice(&hr);
        let hm = x.inverse_hessian_apply(&m).unwrap_or_default();
        let scale = a.norm() * linalg::norm2(&hm).max(1e-300);
        rep.check(ahr.norm() <= 1e-8 * scale, || {
            format!("case {case}: |A H r| = {:e} vs scale {scale:e} for {cone:?}", ahr.norm())
        });

        // min |H^{1/2}(m + A^T lambda)| through QR of the dense weighted matrix
        let mut hdense = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            hdense.set_column(j, &nalgebra::DVector::from_vec(x.inverse_hessian_apply(&e).unwrap_or_default()));
        }
        let hsym = (&hdense + hdense.transpose()) * 0.5;
        let Some(root) = sym_sqrt(&hsym, 1e-12) else {
            rep.check(false, || format!("case {case}: inverse Hessian is not PSD"));
            continue;
        };
        let design = &root * a.transpose();
        let rhs = -(&root * nalgebra::DVector::from_column_slice(&m));
        let qr = design.clone().qr();
        let qtb = qr.q().transpose() * rhs;
        let oracle = qr.r().solve_upper_triangular(&qtb);
        let ok = match &oracle {
            Some(l) => {
                let diff = (l - nalgebra::DVector::from_column_slice(&dual.lambda)).norm();
                diff <= 1e-8 * (1.0 + l.norm())
            }
            None => false,
        };
        rep.check(ok, || format!("case {case}: lambda {:?} vs oracle {:?}", dual.lambda, oracle.as_ref().map(|l| l.as_slice().to_vec())));
    }
    rep
}

/// Every published schedule swept to `kmax` for `s_eta` in {0.3, 0.5, 0.9}.
pub fn schedule_suite(config: &AuditConfig) -> SuiteReport {
    let mut rep = SuiteReport::new("schedules");
    let variants = [Variant::ME, Variant::Me1 { batch: 10 }, Variant::Fg, Variant::Pm, Variant::Em, Variant::Rm];
    for variant in variants {
        for &s in &[0.3, 0.5, 0.9] {
            let sched = Schedule::new(variant, s, 1e-3, 10.0).expect("valid schedule");
            let floor = sched.mu_floor();
            let mut prev = sched.at(0);
            let batch = |m: Momentum| match m {
                Momentum::Batch(b) => b,
                _ => 0,
            };
            let mut bad = 0usize;
            let mut first: Option<String> = None;
            let mut note = |k: usize, what: &str, bad: &mut usize| {
                *bad += 1;
                if first.is_none() {
                    first = Some(format!("{variant} s = {s} k = {k}: {what}"));
                }
            };
            for k in 0..=config.kmax {
                let v = sched.at(k);
                if !(v.eta > 0.0 && v.eta < 1.0) {
                    note(k, "eta outside (0, 1)", &mut bad);
                }
                if !(v.mu >= floor && v.mu <= 1.0) {
                    note(k, "mu outside [floor, 1]", &mut bad);
                }
                if k > 0 {
                    if v.eta > prev.eta || v.mu > prev.mu || v.gamma() > prev.gamma() {
                        note(k, "schedule increased", &mut bad);
                    }
                    if batch(v.momentum) < batch(prev.momentum) {
                        note(k, "batch size decreased", &mut bad);
                    }
                }
                match variant {
                    Variant::Pm | Variant::Rm if v.gamma() <= v.eta => note(k, "gamma <= eta", &mut bad),
                    Variant::Em if v.eta / v.gamma() > s => note(k, "eta / gamma > s_eta", &mut bad),
                    _ => {}
                }
                if let (Some(alpha), Some(lb)) = (sched.alpha(k), sched.alpha_lower_bound(k)) {
                    if !(alpha > 0.0 && alpha <= 1.0) {
                        note(k, "alpha outside (0, 1]", &mut bad);
                    }
                    if alpha < lb * (1.0 - 1e-12) {
                        note(k, "alpha below its lower bound", &mut bad);
                    }
                    if let (Some(p), Some(pn)) = (sched.potential_weight(k), sched.potential_weight(k + 1)) {
                        if (1.0 - alpha) * pn > (1.0 - alpha / 2.0) * p * (1.0 + 1e-15) {
                            note(k, "potential inequality", &mut bad);
                        }
                    }
                }
                prev = v;
            }
            rep.checked += config.kmax + 1;
            rep.failed += bad;
            if let Some(f) = first {
                if rep.examples.len() < MAX_EXAMPLES {
                    rep.examples.push(f);
                }
            }
        }
    }
    rep
}

/// Small seeded instances of the three benchmark problems.
pub fn small_problems(seed: u64) -> Vec<ConicProblem> {
    let reg = synth::regression(&synth::RegressionSpec::new(5, 50), seed)
        .and_then(|s| s.into_data(Default::default()))
        .and_then(|d| problems::robust_regression(&d));
    let mt = synth::multitask(&synth::MultiTaskSpec::new(3, 20, 4), seed).and_then(|d| problems::multitask(&d));
    let cl = synth::cluster(&synth::ClusterSpec::new(8, 2, 10), seed)
        .and_then(|s| s.into_data(2, Default::default()))
        .and_then(|d| problems::stream_cluster(&d));
    [reg, mt, cl].into_iter().map(|p| p.expect("small problems build")).collect()
}

/// A feasible interior point: `x0` moved along a random null-space
/// direction of local length `r < 1`.
pub fn random_feasible_point(problem: &ConicProblem, r: f64, rng: &mut impl Rng) -> Vec<f64> {
    let x0 = problem.cone.point(problem.x0.clone()).expect("x0 is interior");
    let g = gaussian(rng, problem.dim());
    let dual = kkt::solve_dual(&problem.constraints, &x0, &g).expect("dual solve at x0");
    let Ok(d) = kkt::search_direction(&dual) else {
        return problem.x0.clone();
    };
    problem.x0.iter().zip(&d).map(|(a, b)| a - r * b).collect()
}

/// Component-mean consistency and finite-difference gradients of every
/// benchmark objective.
pub fn finite_sum_suite(config: &AuditConfig) -> SuiteReport {
    let mut rep = SuiteReport::new("finite-sum");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xf5);
    for problem in small_problems(config.seed) {
        let obj = problem.objective.as_ref();
        for _ in 0..20 {
            let x = random_feasible_point(&problem, 0.9 * rng.gen::<f64>(), &mut rng);
            let name = &problem.name;
            let full = match obj.gradient(&x) {
                Ok(g) => g,
                Err(e) => {
                    rep.check(false, || format!("{name}: {e}"));
                    continue;
                }
            };
            let mut mean = vec![0.0; x.len()];
            let p = obj.n_components();
            for i in 0..p {
                let g = obj.component_gradient(i, &x).unwrap_or_else(|_| vec![f64::NAN; x.len()]);
                linalg::axpy(1.0 / p as f64, &g, &mut mean);
            }
            let err = rel_err(&mean, &full);
            rep.check(err <= 1e-10, || format!("{name}: component mean differs by {err:e}"));

            let h = 1e-6 * (1.0 + linalg::norm2(&x));
            let mut fd = vec![0.0; x.len()];
            for (j, fj) in fd.iter_mut().enumerate() {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[j] += h;
                dn[j] -= h;
                *fj = (obj.value(&up).unwrap_or(f64::NAN) - obj.value(&dn).unwrap_or(f64::NAN)) / (2.0 * h);
            }
            let err = rel_err(&fd, &full);
            rep.check(err <= 1e-5, || format!("{name}: finite-difference error {err:e}"));
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> AuditConfig {
        AuditConfig {
            kmax: 2000,
            ..AuditConfig::default()
        }
    }

    #[test]
    fn all_suites_pass() {
        for name in SUITES {
            let rep = run_suite(name, &quick()).unwrap();
            assert!(rep.passed(), "{rep}");
            assert!(rep.checked > 0);
        }
    }

    #[test]
    fn perturbed_hessian_is_caught() {
        let cfg = AuditConfig {
            perturb_hessian: 1e-3,
            ..quick()
        };
        assert!(!barrier_suite(&cfg).passed());
    }

    #[test]
    fn unknown_suite() {
        assert!(run_suite("nope", &quick()).is_none());
    }
}
