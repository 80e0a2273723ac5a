//! Reference gradients, checkpointed runs, aggregation and replicate moments.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;

use super::variant::{epoch_budget_to_iters, variant_config, StepParams, VariantName};
use crate::error::invalid;
use crate::problem::StochasticFixedPointProblem;
use crate::rng::derive_seed;
use crate::sid::{aid_batch, estimate, SidConfig};
use crate::{RealVec, Result};

/// Iterations of the deterministic estimator used as reference when no
/// closed form exists.
pub const REFERENCE_ITERS: usize = 2000;

/// Closed-form hypergradient when available, otherwise the deterministic
/// estimator with `t = k = 2000`.
pub fn reference_gradient<P: StochasticFixedPointProblem + ?Sized>(problem: &P, lambda: &RealVec) -> Result<RealVec> {
    if let Some(g) = problem.exact_hypergrad(lambda) {
        return Ok(g);
    }
    Ok(aid_batch(problem, lambda, REFERENCE_ITERS, REFERENCE_ITERS)?.grad)
}

/// Memoises [`reference_gradient`] per `λ` (bitwise).
#[derive(Debug, Default)]
pub struct ReferenceCache {
    entries: Mutex<HashMap<Vec<u64>, RealVec>>,
}

impl ReferenceCache {
    pub fn get<P: StochasticFixedPointProblem + ?Sized>(&self, problem: &P, lambda: &RealVec) -> Result<RealVec> {
        let key: Vec<u64> = lambda.iter().map(|x| x.to_bits()).collect();
        if let Some(g) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(g.clone());
        }
        let g = reference_gradient(problem, lambda)?;
        self.entries.lock().expect("cache lock").insert(key, g.clone());
        Ok(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: f64,
    pub t: usize,
    pub k: usize,
    pub sq_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub variant: VariantName,
    pub seed: u64,
    pub checkpoints: Vec<Checkpoint>,
}

/// `n` epochs spaced logarithmically from `total/100` to `total`.
pub fn log_checkpoints(total_epochs: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![total_epochs],
        _ => {
            let (lo, hi) = ((total_epochs / 100.0).ln(), total_epochs.ln());
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        total_epochs
                    } else {
                        (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Everything a run needs besides the problem.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub checkpoint_epochs: Vec<f64>,
    pub batch_ll: usize,
    pub batch_ls: usize,
    pub params: StepParams,
}

/// At every checkpoint epoch `e` a fresh estimate is computed with the
/// iterations affordable in `e` epochs and compared to `reference`.
pub fn run_variant<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    variant: VariantName,
    settings: &RunSettings,
    reference: &RealVec,
    run_id: usize,
    master_seed: u64,
) -> Result<RunRecord> {
    let spec = variant.spec();
    let n_tr = problem.sampling().n;
    let mut checkpoints = Vec::with_capacity(settings.checkpoint_epochs.len());
    let mut last = f64::NEG_INFINITY;
    for &epoch in &settings.checkpoint_epochs {
        if epoch < last {
            return Err(invalid("checkpoint epochs must be nondecreasing"));
        }
        last = epoch;
        let (t, k) = epoch_budget_to_iters(&spec, epoch, n_tr, settings.batch_ll, settings.batch_ls)?;
        let cfg = variant_config(problem, lambda, &spec, t, k, &settings.params)?;
        let est = estimate(problem, lambda, &cfg, master_seed, None)?;
        checkpoints.push(Checkpoint {
            epoch,
            t,
            k,
            sq_error: (&est.grad - reference).norm_squared(),
        });
    }
    Ok(RunRecord {
        run_id,
        variant,
        seed: master_seed,
        checkpoints,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub epoch: f64,
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub variant: VariantName,
    pub points: Vec<CurvePoint>,
}

/// Pointwise mean and population std of runs of one variant.
pub fn aggregate_runs(records: &[RunRecord]) -> Result<Curve> {
    let first = records.first().ok_or_else(|| invalid("no records to aggregate"))?;
    for r in records {
        let aligned = r.variant == first.variant
            && r.checkpoints.len() == first.checkpoints.len()
            && r.checkpoints
                .iter()
                .zip(&first.checkpoints)
                .all(|(a, b)| a.epoch == b.epoch);
        if !aligned {
            return Err(invalid(format!(
                "run {} is not aligned with run {}",
                r.run_id, first.run_id
            )));
        }
    }
    let n = records.len() as f64;
    let points = (0..first.checkpoints.len())
        .map(|i| {
            let vals = records.iter().map(|r| r.checkpoints[i].sq_error);
            let mean = vals.clone().sum::<f64>() / n;
            let var = vals.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            CurvePoint {
                epoch: first.checkpoints[i].epoch,
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    Ok(Curve {
        variant: first.variant,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mse: f64,
    pub bias_sq: f64,
    pub variance: f64,
    /// Monte-Carlo standard error of `mse`.
    pub mc_std: f64,
    pub n_replicates: usize,
}

/// Replicate moments of an estimator around `reference`. Replicate `i` uses
/// master seed `derive_seed(master_seed, i)`; replicates run in parallel and
/// are reduced in index order.
pub fn empirical_moments_against<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    config: &SidConfig,
    n_replicates: usize,
    master_seed: u64,
    reference: &RealVec,
) -> Result<Moments> {
    if n_replicates < 2 {
        return Err(invalid("empirical moments need at least 2 replicates"));
    }
    let grads = (0..n_replicates)
        .into_par_iter()
        .map(|i| estimate(problem, lambda, config, derive_seed(master_seed, i as u64), None).map(|e| e.grad))
        .collect::<Result<Vec<_>>>()?;
    Ok(moments_of(&grads, reference))
}

/// [`empirical_moments_against`] with the [`reference_gradient`].
pub fn empirical_moments<P: StochasticFixedPointProblem + ?Sized>(
    problem: &P,
    lambda: &RealVec,
    config: &SidConfig,
    n_replicates: usize,
    master_seed: u64,
) -> Result<Moments> {
    let reference = reference_gradient(problem, lambda)?;
    empirical_moments_against(problem, lambda, config, n_replicates, master_seed, &reference)
}

/// `mse = (1/N)Σ‖gᵢ − g*‖²`, `bias_sq = ‖ḡ − g*‖²`, `variance = (1/N)Σ‖gᵢ − ḡ‖²`.
pub fn moments_of(grads: &[RealVec], reference: &RealVec) -> Moments {
    let n = grads.len() as f64;
    let mean = grads.iter().fold(RealVec::zeros(reference.len()), |acc, g| acc + g) / n;
    let errs: Vec<f64> = grads.iter().map(|g| (g - reference).norm_squared()).collect();
    let mse = errs.iter().sum::<f64>() / n;
    let variance = grads.iter().map(|g| (g - &mean).norm_squared()).sum::<f64>() / n;
    let spread = errs.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Moments {
        mse,
        bias_sq: (&mean - reference).norm_squared(),
        variance,
        mc_std: (spread / n).sqrt(),
        n_replicates: grads.len(),
    }
}

/// Squared errors `‖x_i − target‖²` of a batch of vectors: mean and its
/// Monte-Carlo standard error.
pub fn mean_sq_error(xs: &[RealVec], target: &RealVec) -> (f64, f64) {
    let n = xs.len() as f64;
    let errs: Vec<f64> = xs.iter().map(|x| (x - target).norm_squared()).collect();
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}
