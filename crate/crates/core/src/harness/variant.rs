//! The estimator variants compared in the experiments and their epoch
//! accounting.

use std::fmt;
use std::str::FromStr;

use crate::error::invalid;
use crate::fixpoint::{schedule_decreasing, StepSchedule};
use crate::problem::{estimate_contraction, StochasticFixedPointProblem};
use crate::sid::{FinalJvp, Oracle, SidConfig, StreamIds, SubproblemSolver};
use crate::{Error, RealVec, Result};

/// Solver used on one subproblem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    /// Deterministic fixed-point iteration, one full pass per iteration.
    Gd,
    SgdConst,
    SgdDec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantName {
    Batch,
    StochConst,
    StochDec,
    StochBatch,
    BatchStoch,
    Batch75_25,
    StochConst75_25,
    StochDec75_25,
}

impl VariantName {
    pub const ALL: [VariantName; 8] = [
        VariantName::Batch,
        VariantName::StochConst,
        VariantName::StochDec,
        VariantName::StochBatch,
        VariantName::BatchStoch,
        VariantName::Batch75_25,
        VariantName::StochConst75_25,
        VariantName::StochDec75_25,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantName::Batch => "batch",
            VariantName::StochConst => "stoch_const",
            VariantName::StochDec => "stoch_dec",
            VariantName::StochBatch => "stoch_batch",
            VariantName::BatchStoch => "batch_stoch",
            VariantName::Batch75_25 => "batch_75_25",
            VariantName::StochConst75_25 => "stoch_const_75_25",
            VariantName::StochDec75_25 => "stoch_dec_75_25",
        }
    }

    pub fn spec(&self) -> VariantSpec {
        use Algo::*;
        let (lower, linear, pct_ll) = match self {
            VariantName::Batch => (Gd, Gd, 50),
            VariantName::StochConst => (SgdConst, SgdConst, 50),
            VariantName::StochDec => (SgdDec, SgdDec, 50),
            VariantName::StochBatch => (SgdDec, Gd, 50),
            VariantName::BatchStoch => (Gd, SgdDec, 50),
            VariantName::Batch75_25 => (Gd, Gd, 75),
            VariantName::StochConst75_25 => (SgdConst, SgdConst, 75),
            VariantName::StochDec75_25 => (SgdDec, SgdDec, 75),
        };
        VariantSpec {
            name: *self,
            lower,
            linear,
            pct_ll,
            pct_ls: 100 - pct_ll,
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = Error;

    /// Accepts `stoch_dec`, `StochDec`, `stoch-dec`, ...
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        VariantName::ALL
            .into_iter()
            .find(|v| v.as_str().replace('_', "") == key)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

impl<'de> serde::Deserialize<'de> for VariantName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantSpec {
    pub name: VariantName,
    pub lower: Algo,
    pub linear: Algo,
    /// Share of the epoch budget spent on the lower level.
    pub pct_ll: u32,
    /// Share spent on the linear system.
    pub pct_ls: u32,
}

/// Iteration counts affordable within `total_epochs`. A GD subproblem uses
/// the full training set per iteration.
pub fn epoch_budget_to_iters(
    spec: &VariantSpec,
    total_epochs: f64,
    n_tr: usize,
    batch_ll: usize,
    batch_ls: usize,
) -> Result<(usize, usize)> {
    if !(total_epochs >= 0.0 && total_epochs.is_finite()) {
        return Err(invalid(format!("epoch budget {total_epochs} must be ≥ 0")));
    }
    if batch_ll == 0 || batch_ls == 0 || n_tr == 0 {
        return Err(invalid("batch sizes and n_tr must be positive"));
    }
    if spec.pct_ll + spec.pct_ls != 100 || spec.pct_ll == 0 || spec.pct_ls == 0 {
        return Err(invalid("epoch percentages must be positive and sum to 100"));
    }
    let iters = |pct: u32, algo: Algo, b: usize| {
        let b = if algo == Algo::Gd { n_tr } else { b };
        (pct as f64 / 100.0 * total_epochs * n_tr as f64 / b as f64).round() as usize
    };
    Ok((
        iters(spec.pct_ll, spec.lower, batch_ll),
        iters(spec.pct_ls, spec.linear, batch_ls),
    ))
}

/// Step-size parameters for the stochastic solvers. Decreasing-step defaults
/// are `β = 2/(1 − q²)` and `γ = β(1 + σ₂)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub eta: f64,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub jvp_samples: usize,
}

impl Default for StepParams {
    fn default() -> Self {
        Self {
            eta: 1.0,
            beta: None,
            gamma: None,
            jvp_samples: 1,
        }
    }
}

fn modulus<P: StochasticFixedPointProblem + ?Sized>(problem: &P, lambda: &RealVec) -> Result<f64> {
    if let Some(q) = problem.contraction_modulus(lambda) {
        return Ok(q);
    }
    let est = estimate_contraction(problem, lambda, 4, 200, 0)?;
    if !est.verified {
        return Err(Error::NotContraction(est.q_est));
    }
    Ok(est.q_est)
}

/// Estimator configuration of `spec` at iteration counts `(t, k)`.
pub fn variant_config<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    spec: &VariantSpec,
    t: usize,
    k: usize,
    params: &StepParams,
) -> Result<SidConfig> {
    let needs_q = spec.lower == Algo::SgdDec || spec.linear == Algo::SgdDec;
    let dec = if needs_q {
        let q = modulus(problem, lambda)?;
        let sigma2 = problem.sigma2_lower(lambda).unwrap_or(0.0);
        Some(schedule_decreasing(q, sigma2, params.beta, params.gamma)?)
    } else {
        None
    };
    let solver = |algo: Algo, iters: usize| match algo {
        Algo::Gd => SubproblemSolver::fixed_point(iters),
        Algo::SgdConst => SubproblemSolver {
            iterations: iters,
            oracle: Oracle::Stochastic,
            schedule: StepSchedule::Constant { eta: params.eta },
        },
        Algo::SgdDec => SubproblemSolver {
            iterations: iters,
            oracle: Oracle::Stochastic,
            schedule: dec.expect("decreasing schedule prepared"),
        },
    };
    let all_gd = spec.lower == Algo::Gd && spec.linear == Algo::Gd;
    Ok(SidConfig {
        lower: solver(spec.lower, t),
        linear: solver(spec.linear, k),
        final_jvp: if all_gd {
            FinalJvp::Exact
        } else {
            FinalJvp::Sampled(params.jvp_samples)
        },
        streams: StreamIds::default(),
        tag: spec.name.to_string(),
    })
}
