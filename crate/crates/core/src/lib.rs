//! Stochastic implicit differentiation (SID) for bilevel problems whose lower
//! level is the fixed point of a stochastic contraction.
//!
//! The crate is organised bottom-up:
//!
//! - [`rng`] and [`problem`]: counter-based randomness, the
//!   [`StochasticFixedPointProblem`] contract, problem constants and the
//!   Monte-Carlo diagnostics used to check them.
//! - [`fixpoint`]: the stochastic Krasnoselskii–Mann iteration and its step
//!   size schedules.
//! - [`sid`]: the hypergradient estimator and its deterministic counterpart.
//! - [`bounds`]: closed-form mean-square-error bounds and rate constants.
//! - [`problems`]: built-in problems (toy contraction, quadratic, binary and
//!   multinomial regularized logistic regression).
//! - [`data`]: IDX/libsvm/CSV ingestion, splitting and minibatch sampling.
//! - [`harness`]: experiment variants, epoch accounting, replicate
//!   statistics and CSV export.
//! - [`outer`]: projected SGD on the hyperparameters.

pub mod bounds;
pub mod data;
pub mod error;
pub mod fixpoint;
pub mod harness;
pub mod linalg;
pub mod outer;
pub mod problem;
pub mod problems;
pub mod rng;
pub mod sid;

pub use error::{Error, Result};
pub use problem::{Constant, ProblemConstants, Provenance, StochasticFixedPointProblem};
pub use rng::{KeyStream, SampleKey};

/// Dense real vector used for `w`, `λ` and every intermediate quantity.
pub type RealVec = nalgebra::DVector<f64>;
