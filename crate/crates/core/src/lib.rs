//! Stochastic interior-point methods for finite-sum objectives over
//! `{x in int K : Ax = b}`, where `K` is a product of orthant,
//! second-order, positive semidefinite and free blocks.
//!
//! ```no_run
//! use sipm_core::estimators::{Schedule, Variant};
//! use sipm_core::problems::{robust_regression, synth};
//! use sipm_core::solver::{run, Budget, RunOptions};
//!
//! let data = synth::regression(&synth::RegressionSpec::new(10, 2000), 7)?
//!     .into_data(Default::default())?;
//! let problem = robust_regression(&data)?;
//! let theta = problem.cone.complexity_parameter();
//! let schedule = Schedule::new(Variant::Rm, 0.5, 0.01, theta)?;
//! let trace = run(&problem, schedule, Budget::Epochs(200.0), 7, RunOptions::default())?;
//! println!("{:?}", trace.last());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod audit;
pub mod cones;
pub mod estimators;
pub mod kkt;
pub mod linalg;
pub mod problems;
pub mod solver;

pub use cones::{Cone, ConeError, InteriorPoint};
pub use estimators::{Schedule, Variant};
pub use kkt::AffineConstraints;
pub use problems::{ConicProblem, Objective};
pub use solver::{run, Budget, IterationRecord, RunOptions, Termination, Trace};
