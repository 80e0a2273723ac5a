//! Monte-Carlo checks of the problem contract and estimation of constants.

use rand::Rng;
use rand_distr::StandardNormal;

use super::StochasticFixedPointProblem;
use crate::error::invalid;
use crate::linalg::{all_finite, power_iteration_psd, random_unit};
use crate::rng::{KeyStream, SampleKey};
use crate::{Error, RealVec, Result};

const PROBE_STREAM: u64 = 0xC0FF_EE00;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnbiasednessReport {
    /// `‖(1/N) Σ sample − mean‖`.
    pub mean_gap: f64,
    /// Monte-Carlo standard error of the sample mean, `sqrt(tr Cov / N)`.
    pub mc_std: f64,
}

impl UnbiasednessReport {
    pub fn within(&self, n_std: f64) -> bool {
        self.mean_gap <= n_std * self.mc_std
    }
}

fn unbiasedness<F>(target: &RealVec, n_samples: usize, master_seed: u64, mut draw: F) -> Result<UnbiasednessReport>
where
    F: FnMut(SampleKey) -> RealVec,
{
    if n_samples < 2 {
        return Err(invalid("check_unbiasedness needs at least 2 samples"));
    }
    let dim = target.len();
    let mut stream = KeyStream::new(master_seed, 0);
    let mut sum = RealVec::zeros(dim);
    let mut sum_sq = RealVec::zeros(dim);
    for _ in 0..n_samples {
        let key = stream.next_key();
        let x = draw(key);
        if !all_finite(&x) {
            return Err(Error::NonFiniteSample(key));
        }
        // centred on the target to keep the variance accumulation stable
        let c = x - target;
        sum_sq += c.component_mul(&c);
        sum += c;
    }
    let n = n_samples as f64;
    let mean_dev = &sum / n;
    let var_trace: f64 = (0..dim)
        .map(|i| ((sum_sq[i] - sum[i] * sum[i] / n) / (n - 1.0)).max(0.0))
        .sum();
    Ok(UnbiasednessReport {
        mean_gap: mean_dev.norm(),
        mc_std: (var_trace / n).sqrt(),
    })
}

/// Compares the empirical mean of `phi_sample` with `phi_mean` at `(w, λ)`.
pub fn check_unbiasedness<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    w: &RealVec,
    lambda: &RealVec,
    n_samples: usize,
    master_seed: u64,
) -> Result<UnbiasednessReport> {
    let target = problem.phi_mean(w, lambda);
    unbiasedness(&target, n_samples, master_seed, |key| {
        problem.phi_sample(w, lambda, key)
    })
}

/// Which transposed Jacobian product to check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianSide {
    W,
    Lambda,
}

/// Same check for `jvp1_t_sample` / `jvp2_t_sample` against their means.
pub fn check_unbiasedness_jvp<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    side: JacobianSide,
    w: &RealVec,
    lambda: &RealVec,
    v: &RealVec,
    n_samples: usize,
    master_seed: u64,
) -> Result<UnbiasednessReport> {
    match side {
        JacobianSide::W => {
            let target = problem.jvp1_t_mean(w, lambda, v);
            unbiasedness(&target, n_samples, master_seed, |key| {
                problem.jvp1_t_sample(w, lambda, key, v)
            })
        }
        JacobianSide::Lambda => {
            let target = problem.jvp2_t_mean(w, lambda, v);
            unbiasedness(&target, n_samples, master_seed, |key| {
                problem.jvp2_t_sample(w, lambda, key, v)
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionEstimate {
    pub q_est: f64,
    /// False when `q_est ≥ 1`: the map is not a verified contraction.
    pub verified: bool,
}

/// Largest estimated spectral norm of `∂₁Φ(w, λ)` over probe points.
///
/// The probe set is the origin, the exact fixed point when available, and
/// `n_probe_points − 1` standard Gaussian points. At each point the norm is
/// obtained by power iteration on `J Jᵀ` (or on `Jᵀ Jᵀ` when no forward
/// product is exposed, which requires a symmetric Jacobian).
pub fn estimate_contraction<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    n_probe_points: usize,
    n_power_iters: usize,
    master_seed: u64,
) -> Result<ContractionEstimate> {
    if n_probe_points == 0 {
        return Err(invalid("estimate_contraction needs at least one probe point"));
    }
    let d = problem.dim_w();
    let mut probes = vec![RealVec::zeros(d)];
    if let Some(w_star) = problem.fixed_point(lambda) {
        probes.push(w_star);
    }
    for i in 1..n_probe_points as u64 {
        let mut rng = SampleKey::new(master_seed, PROBE_STREAM, i).rng();
        probes.push(RealVec::from_fn(d, |_, _| rng.sample(StandardNormal)));
    }

    let mut q_est: f64 = 0.0;
    for (i, w) in probes.iter().enumerate() {
        let start = random_unit(d, SampleKey::new(master_seed, PROBE_STREAM + 1, i as u64));
        let has_forward = problem.jvp1_mean(w, lambda, &start).is_some();
        let apply = |v: &RealVec| {
            let jt_v = problem.jvp1_t_mean(w, lambda, v);
            if has_forward {
                problem.jvp1_mean(w, lambda, &jt_v).expect("forward product")
            } else {
                problem.jvp1_t_mean(w, lambda, &jt_v)
            }
        };
        let top = power_iteration_psd(apply, start, n_power_iters);
        if !top.is_finite() {
            return Err(Error::NonFiniteIterate { iteration: i });
        }
        q_est = q_est.max(top.sqrt());
    }
    Ok(ContractionEstimate {
        q_est,
        verified: q_est < 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceEstimate {
    /// `2 ×` empirical trace-variance of `phi_sample` at the probe point.
    pub sigma1_hat: f64,
    /// Empirical proxy for the variance of `∂₂Φ̂`: the largest, over a few
    /// random unit probes `u`, of the mean of `‖(∂₂Φ̂ − ∂₂Φ)ᵀ u‖²`.
    pub m2_hat: f64,
}

const M2_PROBES: usize = 8;

pub fn estimate_variance_constants<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    w_probe: &RealVec,
    n_samples: usize,
    master_seed: u64,
) -> Result<VarianceEstimate> {
    if n_samples < 2 {
        return Err(invalid("estimate_variance_constants needs at least 2 samples"));
    }
    let d = problem.dim_w();
    let mut stream = KeyStream::new(master_seed, 1);
    let mut sum = RealVec::zeros(d);
    let mut sum_sq = RealVec::zeros(d);
    let center = problem.phi_mean(w_probe, lambda);
    for _ in 0..n_samples {
        let key = stream.next_key();
        let x = problem.phi_sample(w_probe, lambda, key);
        if !all_finite(&x) {
            return Err(Error::NonFiniteSample(key));
        }
        let c = x - &center;
        sum_sq += c.component_mul(&c);
        sum += c;
    }
    let n = n_samples as f64;
    let trace_var: f64 = (0..d)
        .map(|i| ((sum_sq[i] - sum[i] * sum[i] / n) / (n - 1.0)).max(0.0))
        .sum();

    let probes: Vec<RealVec> = (0..M2_PROBES.min(d.max(1)))
        .map(|i| random_unit(d, SampleKey::new(master_seed, PROBE_STREAM + 2, i as u64)))
        .collect();
    let mut m2_hat: f64 = 0.0;
    for u in &probes {
        let mean = problem.jvp2_t_mean(w_probe, lambda, u);
        let mut stream = KeyStream::new(master_seed, 2);
        let mut acc = 0.0;
        for _ in 0..n_samples {
            let key = stream.next_key();
            let s = problem.jvp2_t_sample(w_probe, lambda, key, u);
            if !all_finite(&s) {
                return Err(Error::NonFiniteSample(key));
            }
            acc += (s - &mean).norm_squared();
        }
        m2_hat = m2_hat.max(acc / n);
    }
    Ok(VarianceEstimate {
        sigma1_hat: 2.0 * trace_var,
        m2_hat,
    })
}
