//! Projected stochastic gradient descent on the hyperparameters.

use crate::error::invalid;
use crate::harness::{epoch_budget_to_iters, variant_config, StepParams, VariantName};
use crate::linalg::all_finite;
use crate::problem::StochasticFixedPointProblem;
use crate::problems::{solve_fixed_point, Classifier};
use crate::rng::derive_seed;
use crate::sid::estimate;
use crate::{Error, RealVec, Result};

/// Closed convex set of admissible hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub enum HyperDomain {
    Box {
        lower: RealVec,
        upper: RealVec,
    },
    /// `λᵢ ≥ lambda_min` for all `i`.
    PositiveOrthant {
        lambda_min: f64,
    },
    Unconstrained,
}

impl HyperDomain {
    pub fn project(&self, lambda: &RealVec) -> RealVec {
        match self {
            HyperDomain::Box { lower, upper } => {
                RealVec::from_fn(lambda.len(), |i, _| lambda[i].clamp(lower[i], upper[i]))
            }
            HyperDomain::PositiveOrthant { lambda_min } => lambda.map(|x| x.max(*lambda_min)),
            HyperDomain::Unconstrained => lambda.clone(),
        }
    }

    pub fn contains(&self, lambda: &RealVec) -> bool {
        &self.project(lambda) == lambda
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            HyperDomain::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return Err(invalid(format!("box bounds must have dimension {dim}")));
                }
                if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
                    return Err(invalid("box lower bound exceeds upper bound"));
                }
            }
            HyperDomain::PositiveOrthant { lambda_min } => {
                if !(*lambda_min >= 0.0 && lambda_min.is_finite()) {
                    return Err(invalid("lambda_min must be finite and ≥ 0"));
                }
            }
            HyperDomain::Unconstrained => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HypergradSource {
    /// The problem's closed-form hypergradient.
    Oracle,
    /// A variant run with a fixed epoch budget per outer step.
    Variant {
        variant: VariantName,
        epochs_per_step: f64,
        batch: usize,
        params: StepParams,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OuterConfig {
    pub steps: usize,
    pub lr: f64,
    pub domain: HyperDomain,
    pub source: HypergradSource,
    /// Start each lower-level solve at the previous outer step's `ŵ`.
    pub warm_start: bool,
    /// Gradient steps on `log λ`.
    pub log_space: bool,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OuterStep {
    pub step: usize,
    pub lambda: RealVec,
    /// Upper objective at the exact fixed point when known, else at `ŵ`.
    pub f_val: f64,
    pub hypergrad: RealVec,
    /// Cumulative epochs spent by the lower-level and linear solvers.
    pub epochs: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OuterTrace {
    pub steps: Vec<OuterStep>,
    pub final_lambda: Option<RealVec>,
    /// Why the loop stopped early, if it did.
    pub aborted: Option<String>,
}

/// Classification metrics at `(λ, w)`, used to annotate trace rows.
pub type Metric<'a> = &'a dyn Fn(&RealVec, &RealVec) -> f64;

pub fn outer_sgd<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda0: &RealVec,
    cfg: &OuterConfig,
    accuracy: Option<Metric<'_>>,
) -> Result<OuterTrace> {
    problem.validate_lambda(lambda0).or_else(|e| match (&cfg.domain, &e) {
        // positivity is the domain's job; only the shape must be right here
        (HyperDomain::PositiveOrthant { .. }, Error::InvalidArgument(_)) if lambda0.len() == problem.dim_lambda() => {
            Ok(())
        }
        _ => Err(e),
    })?;
    cfg.domain.validate(lambda0.len())?;
    if !cfg.domain.contains(lambda0) {
        return Err(invalid("λ₀ lies outside the domain"));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(invalid(format!("outer learning rate {} must be ≥ 0", cfg.lr)));
    }
    if cfg.log_space && lambda0.iter().any(|&x| x <= 0.0) {
        return Err(invalid("log-space steps need a positive λ₀"));
    }

    let mut trace = OuterTrace::default();
    let mut lambda = lambda0.clone();
    let mut w_prev: Option<RealVec> = None;
    let mut epochs = 0.0;
    for s in 0..cfg.steps {
        let step = match hypergrad_step(problem, &lambda, cfg, s, w_prev.as_ref()) {
            Ok(x) => x,
            Err(e) => {
                trace.aborted = Some(e.to_string());
                break;
            }
        };
        let (grad, w_hat, cost) = step;
        epochs += cost;
        let w_eval = problem.fixed_point(&lambda).unwrap_or_else(|| w_hat.clone());
        trace.steps.push(OuterStep {
            step: s,
            lambda: lambda.clone(),
            f_val: problem.upper_value(&w_eval, &lambda),
            hypergrad: grad.clone(),
            epochs,
            accuracy: accuracy.map(|f| f(&lambda, &w_eval)),
        });
        if cfg.warm_start {
            w_prev = Some(w_hat);
        }
        let next = if cfg.log_space {
            let mu = lambda.map(f64::ln) - grad.component_mul(&lambda) * cfg.lr;
            mu.map(f64::exp)
        } else {
            &lambda - grad * cfg.lr
        };
        let next = cfg.domain.project(&next);
        if !all_finite(&next) {
            trace.aborted = Some(format!("non-finite λ after step {s}"));
            break;
        }
        lambda = next;
    }
    trace.final_lambda = Some(lambda);
    Ok(trace)
}

fn hypergrad_step<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    cfg: &OuterConfig,
    s: usize,
    warm: Option<&RealVec>,
) -> Result<(RealVec, RealVec, f64)> {
    match &cfg.source {
        HypergradSource::Oracle => {
            let g = problem
                .exact_hypergrad(lambda)
                .ok_or_else(|| Error::Unsupported("problem has no exact hypergradient".into()))?;
            let w = problem
                .fixed_point(lambda)
                .ok_or_else(|| Error::Unsupported("problem has no exact fixed point".into()))?;
            Ok((g, w, 0.0))
        }
        HypergradSource::Variant {
            variant,
            epochs_per_step,
            batch,
            params,
        } => {
            let spec = variant.spec();
            let n = problem.sampling().n;
            let (t, k) = epoch_budget_to_iters(&spec, *epochs_per_step, n, *batch, *batch)?;
            let sid_cfg = variant_config(problem, lambda, &spec, t, k, params)?;
            let est = estimate(problem, lambda, &sid_cfg, derive_seed(cfg.master_seed, s as u64), warm)?;
            Ok((est.grad, est.w_hat, est.epoch_cost))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub val_loss: f64,
    pub accuracy: f64,
}

/// Solves the lower level to `1e−10` and reports mean loss and accuracy on
/// the problem's evaluation set.
pub fn evaluate<P: StochasticFixedPointProblem + Classifier + ?Sized>(
    problem: &P,
    lambda: &RealVec,
) -> Result<Evaluation> {
    let w = match problem.fixed_point(lambda) {
        Some(w) => w,
        None => solve_fixed_point(problem, lambda, None, 1e-10, 10_000_000)?,
    };
    Ok(Evaluation {
        val_loss: problem.eval_loss(&w),
        accuracy: problem.eval_accuracy(&w),
    })
}
