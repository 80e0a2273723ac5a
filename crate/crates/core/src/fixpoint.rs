//! Stochastic Krasnoselskii–Mann iteration
//!
//! `w_{t+1} = w_t + η_t (T̂(w_t, ζ_t) − w_t)`
//!
//! with constant, decreasing (`η_t = β / (γ + t)`) or two-phase step sizes.

use crate::error::invalid;
use crate::linalg::all_finite;
use crate::rng::{KeyStream, SampleKey};
use crate::{Error, RealVec, Result};

/// Iterates whose norm exceeds this abort the run.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// A map accessible through an unbiased stochastic oracle.
pub trait StochasticMap {
    fn dim(&self) -> usize;
    fn sample(&self, x: &RealVec, key: SampleKey) -> RealVec;
    fn mean(&self, x: &RealVec) -> RealVec;
}

/// Runs a stochastic map through its exact mean; keys are still consumed so
/// sample accounting is identical.
pub struct MeanOracle<'a, M: ?Sized>(pub &'a M);

impl<M: StochasticMap + ?Sized> StochasticMap for MeanOracle<'_, M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn sample(&self, x: &RealVec, _key: SampleKey) -> RealVec {
        self.0.mean(x)
    }

    fn mean(&self, x: &RealVec) -> RealVec {
        self.0.mean(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    Decreasing {
        beta: f64,
        gamma: f64,
    },
    /// Constant `eta` for `t < switch_iter`, then `β / (γ + t − switch_iter)`.
    TwoPhase {
        eta: f64,
        beta: f64,
        gamma: f64,
        switch_iter: usize,
    },
}

impl StepSchedule {
    pub fn value_at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::Decreasing { beta, gamma } => beta / (gamma + t as f64),
            StepSchedule::TwoPhase {
                eta,
                beta,
                gamma,
                switch_iter,
            } => {
                if t < switch_iter {
                    eta
                } else {
                    beta / (gamma + (t - switch_iter) as f64)
                }
            }
        }
    }

    /// Checks the admissibility conditions of the convergence theorems for a
    /// map with contraction modulus `q` and variance constant `σ₂`, when known.
    pub fn check_admissible(&self, q: Option<f64>, sigma2: Option<f64>) -> Result<()> {
        let sigma2 = sigma2.unwrap_or(0.0);
        let eta_max = 1.0 / (1.0 + sigma2);
        let check_const = |eta: f64| {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::InadmissibleSchedule(format!("η = {eta} must be positive")));
            }
            if eta > eta_max * (1.0 + 1e-12) {
                return Err(Error::InadmissibleSchedule(format!(
                    "η = {eta} exceeds 1/(1+σ₂) = {eta_max}"
                )));
            }
            Ok(())
        };
        let check_dec = |beta: f64, gamma: f64| {
            if !(beta > 0.0 && gamma > 0.0 && beta.is_finite() && gamma.is_finite()) {
                return Err(Error::InadmissibleSchedule(format!(
                    "β = {beta}, γ = {gamma} must be positive"
                )));
            }
            if let Some(q) = q {
                let beta_min = 1.0 / (1.0 - q * q);
                if beta <= beta_min {
                    return Err(Error::InadmissibleSchedule(format!(
                        "β = {beta} must exceed 1/(1−q²) = {beta_min}"
                    )));
                }
            }
            if gamma < beta * (1.0 + sigma2) * (1.0 - 1e-12) {
                return Err(Error::InadmissibleSchedule(format!(
                    "γ = {gamma} must be at least β(1+σ₂) = {}",
                    beta * (1.0 + sigma2)
                )));
            }
            Ok(())
        };
        match *self {
            StepSchedule::Constant { eta } => check_const(eta),
            StepSchedule::Decreasing { beta, gamma } => check_dec(beta, gamma),
            StepSchedule::TwoPhase { eta, beta, gamma, .. } => {
                check_const(eta)?;
                check_dec(beta, gamma)
            }
        }
    }
}

/// `Constant(η)` with `η = 1/(1+σ₂)` unless overridden.
pub fn schedule_constant(sigma2: f64, eta_override: Option<f64>) -> Result<StepSchedule> {
    if !(sigma2 >= 0.0) {
        return Err(invalid(format!("σ₂ = {sigma2} must be ≥ 0")));
    }
    let eta_max = 1.0 / (1.0 + sigma2);
    let eta = eta_override.unwrap_or(eta_max);
    let schedule = StepSchedule::Constant { eta };
    schedule.check_admissible(None, Some(sigma2))?;
    Ok(schedule)
}

/// `Decreasing(β, γ)` with defaults `β = 2/(1−q²)` and `γ = β(1+σ₂)`.
pub fn schedule_decreasing(q: f64, sigma2: f64, beta: Option<f64>, gamma: Option<f64>) -> Result<StepSchedule> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::NotContraction(q));
    }
    if !(sigma2 >= 0.0) {
        return Err(invalid(format!("σ₂ = {sigma2} must be ≥ 0")));
    }
    let beta = beta.unwrap_or(2.0 / (1.0 - q * q));
    let gamma = gamma.unwrap_or(beta * (1.0 + sigma2));
    let schedule = StepSchedule::Decreasing { beta, gamma };
    schedule.check_admissible(Some(q), Some(sigma2))?;
    Ok(schedule)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulePlan {
    pub schedule: StepSchedule,
    pub note: Option<String>,
}

/// Constant phase at `η = 1/(1+σ₂)` until the constant-step envelope
/// `(1−η(1−q²))^t (MSE₀ − F) + F`, with floor `F = ησ₁/(1−q²)`, drops to `2F`;
/// then the default decreasing schedule restarted from `t = 0`.
///
/// `2F` is where `γ·MSE₀` stops dominating the decreasing-phase constant `c`
/// for `β = 2/(1−q²)`, `γ = β(1+σ₂)`; the envelope never reaches `F` itself.
pub fn schedule_two_phase(q: f64, sigma1: f64, sigma2: f64, mse0_estimate: f64) -> Result<SchedulePlan> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::NotContraction(q));
    }
    if !(sigma1 >= 0.0 && sigma2 >= 0.0 && mse0_estimate >= 0.0) {
        return Err(invalid("σ₁, σ₂ and MSE₀ must be ≥ 0"));
    }
    let eta = 1.0 / (1.0 + sigma2);
    if sigma1 == 0.0 {
        return Ok(SchedulePlan {
            schedule: StepSchedule::Constant { eta },
            note: Some("σ₁ = 0: no noise floor, constant step size throughout".into()),
        });
    }
    let floor = eta * sigma1 / (1.0 - q * q);
    let target = 2.0 * floor;
    let switch_iter = if mse0_estimate <= target {
        0
    } else {
        let rate = 1.0 - eta * (1.0 - q * q);
        if rate <= 0.0 {
            1
        } else {
            let t = ((target - floor) / (mse0_estimate - floor)).ln() / rate.ln();
            let mut t = t.ceil().max(0.0) as usize;
            // guard the ceil against rounding in ln
            let env = |t: usize| rate.powf(t as f64) * (mse0_estimate - floor) + floor;
            while t > 0 && env(t - 1) <= target {
                t -= 1;
            }
            while env(t) > target {
                t += 1;
            }
            t
        }
    };
    let beta = 2.0 / (1.0 - q * q);
    Ok(SchedulePlan {
        schedule: StepSchedule::TwoPhase {
            eta,
            beta,
            gamma: beta * (1.0 + sigma2),
            switch_iter,
        },
        note: None,
    })
}

/// `(σ₁, σ₂)` of the variance model implied by a per-sample Lipschitz bound
/// `L_T̂` on the stochastic map: `σ₁ = 2 V[T̂(w*)]`, `σ₂ = 2(L_T̂² + q²)/(1−q)²`.
pub fn lipschitz_to_variance(l_hat_t: f64, q: f64, var_at_fixed_point: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::NotContraction(q));
    }
    let sigma1 = 2.0 * var_at_fixed_point;
    let sigma2 = 2.0 * (l_hat_t * l_hat_t + q * q) / (1.0 - q).powi(2);
    Ok((sigma1, sigma2))
}

/// Which iterates to keep besides the final one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Recording {
    /// Only the final iterate.
    Final,
    /// `t = 0, every, 2·every, …` and the final iterate.
    Every(usize),
    /// Exactly these iteration indices (those `≤ steps`) and the final iterate.
    At(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub checkpoints: Vec<(usize, RealVec)>,
    pub final_iterate: RealVec,
    /// Number of map samples consumed.
    pub sample_count: usize,
}

impl Trajectory {
    pub fn iterate_at(&self, t: usize) -> Option<&RealVec> {
        self.checkpoints.iter().find(|(i, _)| *i == t).map(|(_, w)| w)
    }
}

/// Runs `steps` iterations of the stochastic Krasnoselskii–Mann scheme from
/// `w0`, drawing `ζ_t` from consecutive keys of `stream`.
pub fn km_run<M: StochasticMap + ?Sized>(
    map: &M,
    w0: &RealVec,
    schedule: &StepSchedule,
    steps: usize,
    stream: &mut KeyStream,
    record: &Recording,
) -> Result<Trajectory> {
    if w0.len() != map.dim() {
        return Err(invalid(format!(
            "w0 has dimension {}, map expects {}",
            w0.len(),
            map.dim()
        )));
    }
    if !all_finite(w0) {
        return Err(Error::NonFiniteIterate { iteration: 0 });
    }
    let wants = |t: usize| match record {
        Recording::Final => false,
        Recording::Every(n) => *n > 0 && t % n == 0,
        Recording::At(list) => list.contains(&t),
    };
    let mut checkpoints = Vec::new();
    let mut w = w0.clone();
    if wants(0) && steps > 0 {
        checkpoints.push((0, w.clone()));
    }
    for t in 0..steps {
        let eta = schedule.value_at(t);
        let mut step = map.sample(&w, stream.next_key());
        step -= &w;
        w.axpy(eta, &step, 1.0);
        let norm = w.norm();
        if !norm.is_finite() {
            return Err(Error::NonFiniteIterate { iteration: t + 1 });
        }
        if norm > DIVERGENCE_GUARD {
            return Err(Error::Diverged { iteration: t + 1, norm });
        }
        if t + 1 < steps && wants(t + 1) {
            checkpoints.push((t + 1, w.clone()));
        }
    }
    checkpoints.push((steps, w.clone()));
    Ok(Trajectory {
        checkpoints,
        final_iterate: w,
        sample_count: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// T(w) = 0.5 w + (1, 1), noiseless.
    struct Halving;

    impl StochasticMap for Halving {
        fn dim(&self) -> usize {
            2
        }
        fn sample(&self, x: &RealVec, _key: SampleKey) -> RealVec {
            self.mean(x)
        }
        fn mean(&self, x: &RealVec) -> RealVec {
            x * 0.5 + RealVec::from_element(2, 1.0)
        }
    }

    #[test]
    fn geometric_recursion_exact() {
        let target = RealVec::from_element(2, 2.0);
        let mut stream = KeyStream::new(0, 0);
        let traj = km_run(
            &Halving,
            &RealVec::zeros(2),
            &StepSchedule::Constant { eta: 1.0 },
            20,
            &mut stream,
            &Recording::Every(1),
        )
        .unwrap();
        for (t, w) in &traj.checkpoints {
            let expected = 0.5f64.powi(*t as i32) * target.norm();
            assert_relative_eq!((w - &target).norm(), expected, max_relative = 1e-12, epsilon = 1e-15);
        }
        assert_eq!(traj.final_iterate, traj.checkpoints.last().unwrap().1);
    }

    #[test]
    fn zero_step_keeps_start() {
        let w0 = RealVec::from_vec(vec![3.0, -1.0]);
        let mut stream = KeyStream::new(0, 0);
        let traj = km_run(
            &Halving,
            &w0,
            &StepSchedule::Constant { eta: 0.0 },
            7,
            &mut stream,
            &Recording::Every(1),
        )
        .unwrap();
        assert!(traj.checkpoints.iter().all(|(_, w)| *w == w0));
    }

    #[test]
    fn consumes_exactly_steps_keys() {
        let mut stream = KeyStream::starting_at(1, 4, 10);
        let traj = km_run(
            &Halving,
            &RealVec::zeros(2),
            &StepSchedule::Constant { eta: 1.0 },
            13,
            &mut stream,
            &Recording::Final,
        )
        .unwrap();
        assert_eq!(traj.sample_count, 13);
        assert_eq!(stream.next_counter(), 23);
        assert_eq!(traj.checkpoints.len(), 1);
    }

    #[test]
    fn recording_indices_strictly_increase() {
        let mut stream = KeyStream::new(0, 0);
        let traj = km_run(
            &Halving,
            &RealVec::zeros(2),
            &StepSchedule::Constant { eta: 1.0 },
            10,
            &mut stream,
            &Recording::At(vec![0, 3, 10, 25]),
        )
        .unwrap();
        let idx: Vec<usize> = traj.checkpoints.iter().map(|(t, _)| *t).collect();
        assert_eq!(idx, vec![0, 3, 10]);
    }

    #[test]
    fn zero_steps_returns_start() {
        let mut stream = KeyStream::new(0, 0);
        let w0 = RealVec::from_vec(vec![1.0, 2.0]);
        let traj = km_run(
            &Halving,
            &w0,
            &StepSchedule::Constant { eta: 1.0 },
            0,
            &mut stream,
            &Recording::Every(1),
        )
        .unwrap();
        assert_eq!(traj.final_iterate, w0);
        assert_eq!(traj.checkpoints, vec![(0, w0)]);
    }

    struct Expanding;

    impl StochasticMap for Expanding {
        fn dim(&self) -> usize {
            1
        }
        fn sample(&self, x: &RealVec, _key: SampleKey) -> RealVec {
            self.mean(x)
        }
        fn mean(&self, x: &RealVec) -> RealVec {
            x * 10.0 + RealVec::from_element(1, 1.0)
        }
    }

    #[test]
    fn divergence_guard_trips() {
        let mut stream = KeyStream::new(0, 0);
        let err = km_run(
            &Expanding,
            &RealVec::zeros(1),
            &StepSchedule::Constant { eta: 1.0 },
            100,
            &mut stream,
            &Recording::Final,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 13, .. }), "{err:?}");
    }

    #[test]
    fn constant_schedule_defaults_and_errors() {
        assert_eq!(
            schedule_constant(0.0, None).unwrap(),
            StepSchedule::Constant { eta: 1.0 }
        );
        assert_eq!(
            schedule_constant(3.0, None).unwrap(),
            StepSchedule::Constant { eta: 0.25 }
        );
        assert!(matches!(
            schedule_constant(0.0, Some(1.5)),
            Err(Error::InadmissibleSchedule(_))
        ));
        assert!(schedule_constant(0.0, Some(0.3)).is_ok());
    }

    #[test]
    fn decreasing_schedule_defaults_and_errors() {
        let s = schedule_decreasing(0.0, 0.0, None, None).unwrap();
        assert_eq!(s, StepSchedule::Decreasing { beta: 2.0, gamma: 2.0 });
        assert_eq!(s.value_at(0), 1.0);
        match schedule_decreasing(0.5, 0.0, None, None).unwrap() {
            StepSchedule::Decreasing { beta, gamma } => {
                assert_relative_eq!(beta, 8.0 / 3.0, max_relative = 1e-15);
                assert_relative_eq!(gamma, 8.0 / 3.0, max_relative = 1e-15);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            schedule_decreasing(0.5, 0.0, Some(1.0), None),
            Err(Error::InadmissibleSchedule(_))
        ));
        assert!(matches!(
            schedule_decreasing(0.5, 1.0, Some(3.0), Some(5.0)),
            Err(Error::InadmissibleSchedule(_))
        ));
        assert!(matches!(
            schedule_decreasing(1.0, 0.0, None, None),
            Err(Error::NotContraction(_))
        ));
    }

    /// Envelope iterated one step at a time, independent of the closed form
    /// used by `schedule_two_phase`.
    fn iterate_envelope_until(q: f64, sigma1: f64, eta: f64, mse0: f64, target: f64) -> usize {
        let rate = 1.0 - eta * (1.0 - q * q);
        let floor = eta * sigma1 / (1.0 - q * q);
        let mut gap = mse0 - floor;
        let mut t = 0;
        while gap + floor > target {
            gap *= rate;
            t += 1;
        }
        t
    }

    #[test]
    fn two_phase_switch_matches_iterated_envelope() {
        let (q, sigma1, sigma2, mse0) = (0.9, 1.0, 0.0, 100.0);
        let plan = schedule_two_phase(q, sigma1, sigma2, mse0).unwrap();
        let floor = sigma1 / (1.0 - q * q);
        let expected = iterate_envelope_until(q, sigma1, 1.0, mse0, 2.0 * floor);
        match plan.schedule {
            StepSchedule::TwoPhase {
                eta,
                beta,
                gamma,
                switch_iter,
            } => {
                assert_eq!(eta, 1.0);
                assert_eq!(switch_iter, expected);
                assert_relative_eq!(beta, 2.0 / 0.19, max_relative = 1e-14);
                assert_eq!(gamma, beta);
                assert_eq!(plan.schedule.value_at(switch_iter - 1), 1.0);
                assert_relative_eq!(plan.schedule.value_at(switch_iter), 1.0, max_relative = 1e-14);
            }
            other => panic!("{other:?}"),
        }
        for &(q, s1, s2, m0) in &[(0.5, 0.3, 1.0, 50.0), (0.99, 2.0, 0.5, 1e4), (0.1, 1e-3, 0.0, 7.0)] {
            let plan = schedule_two_phase(q, s1, s2, m0).unwrap();
            let eta = 1.0 / (1.0 + s2);
            let expected = iterate_envelope_until(q, s1, eta, m0, 2.0 * eta * s1 / (1.0 - q * q));
            match plan.schedule {
                StepSchedule::TwoPhase { switch_iter, .. } => assert_eq!(switch_iter, expected),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn two_phase_degenerate_cases() {
        let plan = schedule_two_phase(0.5, 0.0, 1.0, 10.0).unwrap();
        assert_eq!(plan.schedule, StepSchedule::Constant { eta: 0.5 });
        assert!(plan.note.is_some());
        let plan = schedule_two_phase(0.5, 1.0, 0.0, 0.5).unwrap();
        assert!(matches!(plan.schedule, StepSchedule::TwoPhase { switch_iter: 0, .. }));
    }

    #[test]
    fn lipschitz_to_variance_examples() {
        assert_eq!(lipschitz_to_variance(0.5, 0.5, 0.0).unwrap(), (0.0, 4.0));
        assert_eq!(lipschitz_to_variance(0.0, 0.0, 0.0).unwrap(), (0.0, 0.0));
        let (d, s, q) = (3.0, 0.2, 0.4);
        let (s1, s2) = lipschitz_to_variance(q, q, d * s * s).unwrap();
        assert_relative_eq!(s1, 2.0 * d * s * s, max_relative = 1e-15);
        assert_relative_eq!(s2, 4.0 * q * q / (1.0 - q) / (1.0 - q), max_relative = 1e-15);
        assert!(lipschitz_to_variance(1.0, 1.0, 0.0).is_err());
    }
}
