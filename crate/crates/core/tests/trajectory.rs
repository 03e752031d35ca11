use sipm_core::audit::small_problems;
use sipm_core::estimators::{Schedule, Variant};
use sipm_core::linalg;
use sipm_core::problems::cluster::{canonical_labels, round_labels};
use sipm_core::problems::{self, equality_tolerance, synth, ConicProblem};
use sipm_core::solver::{self, Budget, RunOptions, SolverState, Termination};

const VARIANTS: [Variant; 6] = [
    Variant::Me1 { batch: 5 },
    Variant::Me {
        initial: 2,
        increment: 2,
    },
    Variant::Pm,
    Variant::Em,
    Variant::Rm,
    Variant::Fg,
];

fn schedule(problem: &ConicProblem, v: Variant, s: f64) -> Schedule {
    Schedule::new(v, s, 0.01, problem.cone.complexity_parameter()).unwrap()
}

/// No early stop; about a hundred records per run.
fn fixed(n: usize) -> RunOptions {
    RunOptions {
        record_every: (n / 100).max(1),
        early_stop: false,
        wall_clock: false,
    }
}

#[test]
fn iterates_stay_interior_feasible_and_take_exact_steps() {
    for problem in small_problems(3) {
        let tol = equality_tolerance(&problem.constraints);
        for v in VARIANTS {
            let mut worst_step = 0.0f64;
            let trace = solver::run_with(&problem, schedule(&problem, v, 0.9), Budget::Iterations(500), 1, fixed(500), |st, rep| {
                assert!(problem.cone.contains_interior(st.x()), "{} {v}: k={}", problem.name, rep.k);
                assert!(rep.drift <= tol, "{} {v}: drift {}", problem.name, rep.drift);
                if !rep.halved && !rep.stationary {
                    worst_step = worst_step.max((rep.step_length - rep.eta).abs() / rep.eta);
                }
                Ok(())
            })
            .unwrap();
            assert_eq!(trace.iterations, 500);
            assert!(worst_step <= 1e-8, "{} {v}: relative step error {worst_step:e}", problem.name);
        }
    }
}

#[test]
fn runs_are_reproducible_per_seed() {
    let problem = small_problems(5).remove(0);
    for v in VARIANTS {
        let run = |seed| {
            solver::run(&problem, schedule(&problem, v, 0.5), Budget::Iterations(200), seed, fixed(200)).unwrap()
        };
        let (a, b, c) = (run(7), run(7), run(8));
        assert_eq!(a.records, b.records, "{v}");
        assert_eq!(a.final_x, b.final_x, "{v}");
        if v == Variant::Fg {
            assert_eq!(a.final_x, c.final_x);
        } else {
            assert_ne!(a.final_x, c.final_x, "{v}");
        }
    }
}

#[test]
fn epoch_budget_counts_samples() {
    let problem = small_problems(2).remove(0);
    let p = problem.n_components() as f64;
    for v in VARIANTS {
        let trace = solver::run(&problem, schedule(&problem, v, 0.5), Budget::Epochs(3.0), 0, fixed(1000)).unwrap();
        let last = trace.last().unwrap();
        assert_eq!(last.k + 1, trace.iterations, "{v}");
        assert!(last.samples as f64 >= 3.0 * p, "{v}");
        assert!((last.epoch - last.samples as f64 / p).abs() < 1e-12);
    }
}

#[test]
fn deterministic_run_reaches_small_true_stationarity() {
    let problem = small_problems(1).remove(1);
    let opts = RunOptions {
        record_every: 100,
        ..RunOptions::default()
    };
    let trace = solver::run(&problem, schedule(&problem, Variant::Fg, 0.9), Budget::Iterations(20_000), 0, opts).unwrap();
    let last = trace.last().unwrap();
    assert!(last.stat_rel < 0.05, "stat_rel {}", last.stat_rel);
    let x = problem.cone.point(trace.final_x.clone()).unwrap();
    let exact = solver::true_stationarity(&problem, &x, last.mu).unwrap();
    assert!(exact / trace.stat0 < 0.05);
    assert_ne!(trace.termination, Termination::EstimatedStationary);
}

#[test]
fn multitask_first_step_keeps_unit_trace() {
    let data = synth::multitask(&synth::MultiTaskSpec::new(3, 30, 4), 11).unwrap();
    let problem = problems::multitask(&data).unwrap();
    let mut state = SolverState::new(&problem, schedule(&problem, Variant::Fg, 0.5), 0).unwrap();
    let report = state.step().unwrap();
    let free = 3 * 4;
    let w: Vec<f64> = state.x()[..free].to_vec();
    let sigma = linalg::smat(&state.x()[free..], 3);
    assert!((sigma.trace() - 1.0).abs() <= 1e-12);
    assert!(linalg::norm2(&w) > 0.0);
    assert!(sigma.symmetric_eigenvalues().min() > 0.0);
    assert!((report.step_length - report.eta).abs() <= 1e-8 * report.eta);
}

#[test]
fn cluster_relaxation_recovers_planted_labels() {
    let spec = synth::ClusterSpec::new(30, 3, 200);
    let planted = synth::cluster(&spec, 4).unwrap();
    let truth = canonical_labels(&planted.labels);
    let data = planted.into_data(3, Default::default()).unwrap();
    let problem = problems::stream_cluster(&data).unwrap();
    let opts = RunOptions {
        record_every: 500,
        early_stop: false,
        wall_clock: false,
    };
    let trace = solver::run(&problem, schedule(&problem, Variant::Fg, 0.9), Budget::Iterations(3000), 0, opts).unwrap();
    let w = linalg::smat(&trace.final_x, 30);
    assert_eq!(round_labels(&w, 3), truth);

    // A stochastic run on the same data also separates the groups.
    let trace = solver::run(&problem, schedule(&problem, Variant::Rm, 0.9), Budget::Epochs(100.0), 1, opts).unwrap();
    let w = linalg::smat(&trace.final_x, 30);
    assert_eq!(round_labels(&w, 3), truth);
}
