//! The bilevel problem contract.
//!
//! A problem exposes the fixed-point map `Φ(w, λ)`, an unbiased stochastic
//! estimator `Φ̂(w, λ, ζ)` and the transposed Jacobian-vector products of both
//! with respect to `w` and `λ`, together with the upper objective `E(w, λ)`
//! and its partial gradients. Jacobians are never materialised.
//!
//! A [`SampleKey`] identifies a realisation of ζ: every sampled capability
//! called with the same key uses the same realisation (for minibatch maps, the
//! same minibatch), so `jvp1_t_sample(w, λ, key, v)` is the transposed
//! Jacobian of `phi_sample(·, λ, key)`.

mod constants;
mod diagnostics;

pub use constants::{Constant, ProblemConstants, Provenance};
pub use diagnostics::{
    check_unbiasedness, check_unbiasedness_jvp, estimate_contraction, estimate_variance_constants, ContractionEstimate,
    JacobianSide, UnbiasednessReport, VarianceEstimate,
};

use crate::rng::SampleKey;
use crate::{RealVec, Result};

/// Dataset-level sampling geometry used for epoch accounting: one stochastic
/// evaluation touches `batch` of the `n` training examples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingInfo {
    pub n: usize,
    pub batch: usize,
}

impl SamplingInfo {
    pub fn epoch_fraction(&self) -> f64 {
        self.batch as f64 / self.n as f64
    }
}

/// Extra structure available when `Φ(w, λ) = w − α ∇₁ℓ(w, λ)` for a strongly
/// convex lower objective `ℓ`.
pub trait MinimizationForm {
    /// The step size `α_λ` inside Φ.
    fn step_size(&self, lambda: &RealVec) -> f64;
    /// Hessian-vector product `∇₁²ℓ(w, λ) v`.
    fn lower_hvp(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> RealVec;
}

pub trait StochasticFixedPointProblem: Send + Sync {
    fn dim_w(&self) -> usize;
    fn dim_lambda(&self) -> usize;

    fn phi_mean(&self, w: &RealVec, lambda: &RealVec) -> RealVec;
    fn phi_sample(&self, w: &RealVec, lambda: &RealVec, key: SampleKey) -> RealVec;

    /// `∂₁Φ(w, λ)ᵀ v`.
    fn jvp1_t_mean(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> RealVec;
    /// `∂₁Φ̂(w, λ, ζ)ᵀ v`.
    fn jvp1_t_sample(&self, w: &RealVec, lambda: &RealVec, key: SampleKey, v: &RealVec) -> RealVec;
    /// `∂₂Φ(w, λ)ᵀ v`, an element of the hyperparameter space.
    fn jvp2_t_mean(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> RealVec;
    /// `∂₂Φ̂(w, λ, ζ)ᵀ v`.
    fn jvp2_t_sample(&self, w: &RealVec, lambda: &RealVec, key: SampleKey, v: &RealVec) -> RealVec;

    fn upper_value(&self, w: &RealVec, lambda: &RealVec) -> f64;
    fn upper_grad1(&self, w: &RealVec, lambda: &RealVec) -> RealVec;
    fn upper_grad2(&self, w: &RealVec, lambda: &RealVec) -> RealVec;

    /// Exact fixed point `w(λ)` when known in closed form.
    fn fixed_point(&self, _lambda: &RealVec) -> Option<RealVec> {
        None
    }

    /// Exact hypergradient `∇f(λ)` when known in closed form.
    fn exact_hypergrad(&self, _lambda: &RealVec) -> Option<RealVec> {
        None
    }

    /// Forward product `∂₁Φ(w, λ) v`. Only needed when `∂₁Φ` is not symmetric.
    fn jvp1_mean(&self, _w: &RealVec, _lambda: &RealVec, _v: &RealVec) -> Option<RealVec> {
        None
    }

    fn minimization_form(&self) -> Option<&dyn MinimizationForm> {
        None
    }

    /// Contraction modulus of `Φ(·, λ)` when it is known analytically.
    fn contraction_modulus(&self, _lambda: &RealVec) -> Option<f64> {
        None
    }

    /// Constants of the bilevel analysis at `λ`, when the problem can supply
    /// them (each flagged analytic or estimated).
    fn constants(&self, _lambda: &RealVec) -> Option<ProblemConstants> {
        None
    }

    /// `σ₂` of the variance model at `λ`. Override when it is known without
    /// computing every constant.
    fn sigma2_lower(&self, lambda: &RealVec) -> Option<f64> {
        self.constants(lambda).map(|c| c.sigma2_lower.value)
    }

    fn sampling(&self) -> SamplingInfo {
        SamplingInfo { n: 1, batch: 1 }
    }

    /// Rejects hyperparameters outside the problem's domain.
    fn validate_lambda(&self, lambda: &RealVec) -> Result<()> {
        if lambda.len() != self.dim_lambda() {
            return Err(crate::error::invalid(format!(
                "λ has dimension {}, expected {}",
                lambda.len(),
                self.dim_lambda()
            )));
        }
        if !crate::linalg::all_finite(lambda) {
            return Err(crate::error::invalid("λ has non-finite entries"));
        }
        Ok(())
    }
}
