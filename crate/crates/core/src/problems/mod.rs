//! Built-in problems.

mod design;
mod logistic;
mod multinomial;
mod quadratic;
mod toy;

pub use logistic::{logistic_constants, logistic_problem, LogisticGeometry, RegLogistic};
pub use multinomial::{multinomial_problem, MultinomialLogistic};
pub use quadratic::{canonical_quadratic, quadratic_bilevel, quadratic_exact_hypergrad, NoiseMode, QuadraticBilevel};
pub use toy::{toy_contraction, ToyContraction};

use crate::error::invalid;
use crate::problem::StochasticFixedPointProblem;
use crate::{Error, RealVec, Result};

/// Regularisation structure `R(w, λ)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    /// `(λ/2)‖w‖²`, one hyperparameter.
    #[default]
    Single,
    /// `½ wᵀ diag(λ) w`, one hyperparameter per feature.
    PerFeature,
}

/// Deterministic fixed-point iteration `w ← Φ(w, λ)` from `start` until
/// `‖Φ(w) − w‖ ≤ tol`.
pub fn solve_fixed_point<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    start: Option<&RealVec>,
    tol: f64,
    max_iter: usize,
) -> Result<RealVec> {
    let mut w = start.cloned().unwrap_or_else(|| RealVec::zeros(problem.dim_w()));
    for _ in 0..max_iter {
        let next = problem.phi_mean(&w, lambda);
        let step = (&next - &w).norm();
        w = next;
        if !step.is_finite() {
            return Err(Error::NonFiniteIterate { iteration: 0 });
        }
        if step <= tol {
            return Ok(w);
        }
    }
    Err(invalid(format!(
        "fixed-point iteration did not reach tolerance {tol} in {max_iter} steps"
    )))
}

/// `f(λ) = E(w(λ), λ)` with the lower level solved to `tol`.
pub fn hyper_objective<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    tol: f64,
) -> Result<f64> {
    let w = solve_fixed_point(problem, lambda, None, tol, 1_000_000)?;
    Ok(problem.upper_value(&w, lambda))
}

/// Problems whose upper level is a validation loss of a classifier.
pub trait Classifier {
    /// Mean loss over the evaluation set.
    fn eval_loss(&self, w: &RealVec) -> f64;
    /// Fraction of the evaluation set classified correctly.
    fn eval_accuracy(&self, w: &RealVec) -> f64;
}

impl Classifier for RegLogistic {
    fn eval_loss(&self, w: &RealVec) -> f64 {
        self.mean_val_loss(w)
    }

    fn eval_accuracy(&self, w: &RealVec) -> f64 {
        self.val_accuracy(w)
    }
}

impl Classifier for MultinomialLogistic {
    fn eval_loss(&self, w: &RealVec) -> f64 {
        self.mean_val_loss(w)
    }

    fn eval_accuracy(&self, w: &RealVec) -> f64 {
        self.val_accuracy(w)
    }
}
