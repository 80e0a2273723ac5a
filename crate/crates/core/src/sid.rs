//! Stochastic implicit differentiation.
//!
//! 1. `ŵ_t`: `t` Krasnoselskii–Mann steps on `w ↦ Φ̂(w, λ, ζ)` from `0`.
//! 2. `v̂_k`: `k` steps on the affine map `v ↦ ∂₁Φ̂(ŵ_t, λ, ζ)ᵀ v + ∇₁E(ŵ_t, λ)`
//!    from `0`, whose fixed point solves `(I − ∂₁Φᵀ) v = ∇₁E`.
//! 3. `∇̂f(λ) = ∇₂E(ŵ_t, λ) + (1/J) Σ_j ∂₂Φ̂(ŵ_t, λ, ζ_j)ᵀ v̂_k`.
//!
//! The three steps draw from three distinct key streams of the same master
//! seed, so lower-level samples are never reused by the linear system or the
//! final Jacobian product.

use crate::error::invalid;
use crate::fixpoint::{km_run, MeanOracle, Recording, StepSchedule, StochasticMap, Trajectory};
use crate::linalg::all_finite;
use crate::problem::StochasticFixedPointProblem;
use crate::rng::{KeyStream, SampleKey};
use crate::{Error, RealVec, Result};

/// Stream ids used for the three random sources of one estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamIds {
    pub lower: u64,
    pub linear: u64,
    pub final_jvp: u64,
}

impl Default for StreamIds {
    fn default() -> Self {
        Self {
            lower: 0,
            linear: 1,
            final_jvp: 2,
        }
    }
}

impl StreamIds {
    pub fn validate(&self) -> Result<()> {
        if self.lower == self.linear || self.lower == self.final_jvp || self.linear == self.final_jvp {
            return Err(invalid(format!("stream ids must be pairwise distinct, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypergradEstimate {
    pub grad: RealVec,
    /// Lower-level iterations.
    pub t: usize,
    /// Linear-system iterations.
    pub k: usize,
    pub jvp_samples: usize,
    pub master_seed: u64,
    pub streams: StreamIds,
    pub variant_tag: String,
    /// Passes over the training data spent on the two subproblems.
    pub epoch_cost: f64,
    /// The lower-level approximation `ŵ_t` the estimate was built at.
    pub w_hat: RealVec,
    pub v_hat: RealVec,
}

/// Which oracle a subproblem solver queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Oracle {
    /// Exact map, one full pass over the data per iteration.
    Deterministic,
    /// Unbiased sampled map.
    Stochastic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubproblemSolver {
    pub iterations: usize,
    pub oracle: Oracle,
    pub schedule: StepSchedule,
}

impl SubproblemSolver {
    /// Plain fixed-point iteration on the exact map (`η ≡ 1`).
    pub fn fixed_point(iterations: usize) -> Self {
        Self {
            iterations,
            oracle: Oracle::Deterministic,
            schedule: StepSchedule::Constant { eta: 1.0 },
        }
    }

    pub fn stochastic(iterations: usize, schedule: StepSchedule) -> Self {
        Self {
            iterations,
            oracle: Oracle::Stochastic,
            schedule,
        }
    }
}

/// How `∂₂Φᵀ v̂` is formed in the final step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinalJvp {
    Exact,
    /// Average of `J ≥ 1` independent samples.
    Sampled(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SidConfig {
    pub lower: SubproblemSolver,
    pub linear: SubproblemSolver,
    pub final_jvp: FinalJvp,
    pub streams: StreamIds,
    pub tag: String,
}

/// `w ↦ Φ̂(w, λ, ζ)` at a fixed `λ`.
pub struct LowerMap<'a, P: ?Sized> {
    problem: &'a P,
    lambda: &'a RealVec,
}

impl<'a, P: StochasticFixedPointProblem + ?Sized> LowerMap<'a, P> {
    pub fn new(problem: &'a P, lambda: &'a RealVec) -> Self {
        Self { problem, lambda }
    }
}

impl<P: StochasticFixedPointProblem + ?Sized> StochasticMap for LowerMap<'_, P> {
    fn dim(&self) -> usize {
        self.problem.dim_w()
    }

    fn sample(&self, x: &RealVec, key: SampleKey) -> RealVec {
        self.problem.phi_sample(x, self.lambda, key)
    }

    fn mean(&self, x: &RealVec) -> RealVec {
        self.problem.phi_mean(x, self.lambda)
    }
}

/// The affine map `Ψ̂_w(v, ζ) = ∂₁Φ̂(w, λ, ζ)ᵀ v + ∇₁E(w, λ)` with `∇₁E`
/// cached at construction.
pub struct LinearSystemMap<'a, P: ?Sized> {
    problem: &'a P,
    w: RealVec,
    lambda: &'a RealVec,
    grad1_e: RealVec,
}

impl<P: StochasticFixedPointProblem + ?Sized> LinearSystemMap<'_, P> {
    pub fn psi_sample(&self, v: &RealVec, key: SampleKey) -> RealVec {
        self.problem.jvp1_t_sample(&self.w, self.lambda, key, v) + &self.grad1_e
    }

    pub fn psi_mean(&self, v: &RealVec) -> RealVec {
        self.problem.jvp1_t_mean(&self.w, self.lambda, v) + &self.grad1_e
    }

    pub fn base_point(&self) -> &RealVec {
        &self.w
    }

    pub fn grad1_e(&self) -> &RealVec {
        &self.grad1_e
    }
}

impl<P: StochasticFixedPointProblem + ?Sized> StochasticMap for LinearSystemMap<'_, P> {
    fn dim(&self) -> usize {
        self.problem.dim_w()
    }

    fn sample(&self, x: &RealVec, key: SampleKey) -> RealVec {
        self.psi_sample(x, key)
    }

    fn mean(&self, x: &RealVec) -> RealVec {
        self.psi_mean(x)
    }
}

pub fn make_linear_map<'a, P: StochasticFixedPointProblem + ?Sized>(
    problem: &'a P,
    w: &RealVec,
    lambda: &'a RealVec,
) -> Result<LinearSystemMap<'a, P>> {
    if !all_finite(w) || !all_finite(lambda) {
        return Err(invalid("make_linear_map: w and λ must be finite"));
    }
    if w.len() != problem.dim_w() {
        return Err(invalid(format!(
            "w has dimension {}, expected {}",
            w.len(),
            problem.dim_w()
        )));
    }
    let grad1_e = problem.upper_grad1(w, lambda);
    Ok(LinearSystemMap {
        problem,
        w: w.clone(),
        lambda,
        grad1_e,
    })
}

fn run_solver<M: StochasticMap + ?Sized>(
    map: &M,
    start: &RealVec,
    solver: &SubproblemSolver,
    stream: &mut KeyStream,
) -> Result<Trajectory> {
    match solver.oracle {
        Oracle::Stochastic => km_run(
            map,
            start,
            &solver.schedule,
            solver.iterations,
            stream,
            &Recording::Final,
        ),
        Oracle::Deterministic => km_run(
            &MeanOracle(map),
            start,
            &solver.schedule,
            solver.iterations,
            stream,
            &Recording::Final,
        ),
    }
}

/// `t` stochastic steps on the lower-level fixed-point equation from `ŵ₀ = 0`.
pub fn solve_lower<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    t: usize,
    schedule: &StepSchedule,
    stream: &mut KeyStream,
) -> Result<Trajectory> {
    let map = LowerMap::new(problem, lambda);
    km_run(
        &map,
        &RealVec::zeros(problem.dim_w()),
        schedule,
        t,
        stream,
        &Recording::Final,
    )
}

/// `k` stochastic steps on the linear system at `w` from `v̂₀ = 0`.
pub fn solve_linear<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    w: &RealVec,
    lambda: &RealVec,
    k: usize,
    schedule: &StepSchedule,
    stream: &mut KeyStream,
) -> Result<Trajectory> {
    let map = make_linear_map(problem, w, lambda)?;
    km_run(
        &map,
        &RealVec::zeros(problem.dim_w()),
        schedule,
        k,
        stream,
        &Recording::Final,
    )
}

/// General SID pipeline. `warm_start` replaces `ŵ₀ = 0` for the lower level.
pub fn estimate<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    config: &SidConfig,
    master_seed: u64,
    warm_start: Option<&RealVec>,
) -> Result<HypergradEstimate> {
    problem.validate_lambda(lambda)?;
    config.streams.validate()?;
    if let FinalJvp::Sampled(0) = config.final_jvp {
        return Err(invalid("at least one final Jacobian sample is required"));
    }
    let d = problem.dim_w();
    let zero = RealVec::zeros(d);
    let w0 = warm_start.unwrap_or(&zero);
    if w0.len() != d {
        return Err(invalid(format!("warm start has dimension {}, expected {d}", w0.len())));
    }

    let mut lower_stream = KeyStream::new(master_seed, config.streams.lower);
    let lower = run_solver(&LowerMap::new(problem, lambda), w0, &config.lower, &mut lower_stream)?;
    let w_hat = lower.final_iterate;

    let linear_map = make_linear_map(problem, &w_hat, lambda)?;
    let mut linear_stream = KeyStream::new(master_seed, config.streams.linear);
    let linear = run_solver(&linear_map, &zero, &config.linear, &mut linear_stream)?;
    let v_hat = linear.final_iterate;

    let mut grad = problem.upper_grad2(&w_hat, lambda);
    let jvp_samples = match config.final_jvp {
        FinalJvp::Exact => {
            grad += problem.jvp2_t_mean(&w_hat, lambda, &v_hat);
            1
        }
        FinalJvp::Sampled(j) => {
            let mut final_stream = KeyStream::new(master_seed, config.streams.final_jvp);
            let mut acc = RealVec::zeros(problem.dim_lambda());
            for _ in 0..j {
                acc += problem.jvp2_t_sample(&w_hat, lambda, final_stream.next_key(), &v_hat);
            }
            grad += acc / j as f64;
            j
        }
    };

    let (t, k) = (config.lower.iterations, config.linear.iterations);
    if !all_finite(&grad) {
        return Err(Error::NonFiniteEstimate {
            t,
            k,
            master_seed,
            streams: config.streams,
        });
    }
    let frac = problem.sampling().epoch_fraction();
    let cost = |s: &SubproblemSolver| match s.oracle {
        Oracle::Deterministic => s.iterations as f64,
        Oracle::Stochastic => s.iterations as f64 * frac,
    };
    Ok(HypergradEstimate {
        grad,
        t,
        k,
        jvp_samples,
        master_seed,
        streams: config.streams,
        variant_tag: config.tag.clone(),
        epoch_cost: cost(&config.lower) + cost(&config.linear),
        w_hat,
        v_hat,
    })
}

/// Algorithm-level entry point: stochastic solvers on both subproblems and a
/// `J`-sample average for the final Jacobian product.
#[allow(clippy::too_many_arguments)]
pub fn sid_estimate<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    t: usize,
    k: usize,
    lower_schedule: &StepSchedule,
    linear_schedule: &StepSchedule,
    master_seed: u64,
    jvp_samples: usize,
) -> Result<HypergradEstimate> {
    let config = SidConfig {
        lower: SubproblemSolver::stochastic(t, *lower_schedule),
        linear: SubproblemSolver::stochastic(k, *linear_schedule),
        final_jvp: FinalJvp::Sampled(jvp_samples),
        streams: StreamIds::default(),
        tag: "sid".into(),
    };
    estimate(problem, lambda, &config, master_seed, None)
}

/// Deterministic counterpart: fixed-point iteration with the exact maps on
/// both subproblems.
pub fn aid_batch<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    t: usize,
    k: usize,
) -> Result<HypergradEstimate> {
    estimate(problem, lambda, &aid_config(t, k), 0, None)
}

pub fn aid_config(t: usize, k: usize) -> SidConfig {
    SidConfig {
        lower: SubproblemSolver::fixed_point(t),
        linear: SubproblemSolver::fixed_point(k),
        final_jvp: FinalJvp::Exact,
        streams: StreamIds::default(),
        tag: "batch".into(),
    }
}

/// `g(v; w, λ) = (α/2) vᵀ∇₁²ℓ(w, λ) v − vᵀ∇₁E(w, λ)`, whose minimiser is the
/// linear-system solution. Only defined for problems with a minimisation form.
pub fn quadratic_form_value<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    v: &RealVec,
    w: &RealVec,
    lambda: &RealVec,
) -> Result<f64> {
    let form = problem
        .minimization_form()
        .ok_or_else(|| Error::Unsupported("quadratic_form_value needs a minimisation-type problem".into()))?;
    let alpha = form.step_size(lambda);
    let hv = form.lower_hvp(w, lambda, v);
    Ok(0.5 * alpha * v.dot(&hv) - v.dot(&problem.upper_grad1(w, lambda)))
}
