//! Small dense helpers shared by the problems and diagnostics.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::SampleKey;
use crate::RealVec;

pub fn all_finite(v: &RealVec) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Random unit vector drawn from `key`.
pub fn random_unit(dim: usize, key: SampleKey) -> RealVec {
    let mut rng = key.rng();
    loop {
        let v = RealVec::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite operator by power
/// iteration, returning the Rayleigh quotient of the final iterate.
pub fn power_iteration_psd<F>(apply: F, start: RealVec, iters: usize) -> f64
where
    F: Fn(&RealVec) -> RealVec,
{
    let mut v = start;
    let n0 = v.norm();
    if n0 == 0.0 {
        return 0.0;
    }
    v /= n0;
    for _ in 0..iters {
        let mv = apply(&v);
        let n = mv.norm();
        if n == 0.0 {
            return 0.0;
        }
        v = mv / n;
    }
    v.dot(&apply(&v)).max(0.0)
}

/// Largest eigenvalue of `X^T X` where the design is stored transposed
/// (`xt` is d×n, one example per column).
pub fn max_eig_gram(xt: &nalgebra::DMatrix<f64>, iters: usize, seed: u64) -> f64 {
    let d = xt.nrows();
    if d == 0 || xt.ncols() == 0 {
        return 0.0;
    }
    let start = random_unit(d, SampleKey::new(seed, u64::MAX, 0));
    power_iteration_psd(
        |v| {
            let u = xt.tr_mul(v);
            xt * u
        },
        start,
        iters,
    )
}
