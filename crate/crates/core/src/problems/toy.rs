use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::invalid;
use crate::problem::{Constant, ProblemConstants, StochasticFixedPointProblem};
use crate::rng::SampleKey;
use crate::{Error, RealVec, Result};

/// `T(w) = q w + c`, sampled with i.i.d. Gaussian noise of standard deviation
/// `s` per coordinate. The single hyperparameter is inert and
/// `E(w) = ½‖w‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyContraction {
    pub q: f64,
    pub c: RealVec,
    pub s: f64,
}

pub fn toy_contraction(q: f64, c: RealVec, s: f64) -> Result<ToyContraction> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::NotContraction(q));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(invalid(format!("noise std {s} must be ≥ 0")));
    }
    if c.is_empty() {
        return Err(invalid("shift must be non-empty"));
    }
    Ok(ToyContraction { q, c, s })
}

impl ToyContraction {
    pub fn fixed_point_value(&self) -> RealVec {
        &self.c / (1.0 - self.q)
    }

    /// `E‖T̂(w) − T(w)‖² = d s²`.
    pub fn noise_variance(&self) -> f64 {
        self.c.len() as f64 * self.s * self.s
    }
}

impl StochasticFixedPointProblem for ToyContraction {
    fn dim_w(&self) -> usize {
        self.c.len()
    }

    fn dim_lambda(&self) -> usize {
        1
    }

    fn phi_mean(&self, w: &RealVec, _lambda: &RealVec) -> RealVec {
        w * self.q + &self.c
    }

    fn phi_sample(&self, w: &RealVec, lambda: &RealVec, key: SampleKey) -> RealVec {
        let mut out = self.phi_mean(w, lambda);
        if self.s > 0.0 {
            let mut rng = key.rng();
            for x in out.iter_mut() {
                *x += self.s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        out
    }

    fn jvp1_t_mean(&self, _w: &RealVec, _lambda: &RealVec, v: &RealVec) -> RealVec {
        v * self.q
    }

    fn jvp1_t_sample(&self, w: &RealVec, lambda: &RealVec, _key: SampleKey, v: &RealVec) -> RealVec {
        self.jvp1_t_mean(w, lambda, v)
    }

    fn jvp2_t_mean(&self, _w: &RealVec, _lambda: &RealVec, _v: &RealVec) -> RealVec {
        RealVec::zeros(1)
    }

    fn jvp2_t_sample(&self, w: &RealVec, lambda: &RealVec, _key: SampleKey, v: &RealVec) -> RealVec {
        self.jvp2_t_mean(w, lambda, v)
    }

    fn upper_value(&self, w: &RealVec, _lambda: &RealVec) -> f64 {
        0.5 * w.norm_squared()
    }

    fn upper_grad1(&self, w: &RealVec, _lambda: &RealVec) -> RealVec {
        w.clone()
    }

    fn upper_grad2(&self, _w: &RealVec, _lambda: &RealVec) -> RealVec {
        RealVec::zeros(1)
    }

    fn fixed_point(&self, _lambda: &RealVec) -> Option<RealVec> {
        Some(self.fixed_point_value())
    }

    fn exact_hypergrad(&self, _lambda: &RealVec) -> Option<RealVec> {
        Some(RealVec::zeros(1))
    }

    fn jvp1_mean(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> Option<RealVec> {
        Some(self.jvp1_t_mean(w, lambda, v))
    }

    fn contraction_modulus(&self, _lambda: &RealVec) -> Option<f64> {
        Some(self.q)
    }

    fn constants(&self, _lambda: &RealVec) -> Option<ProblemConstants> {
        let var = self.noise_variance();
        let mut c = ProblemConstants {
            q: Constant::analytic(self.q),
            l_e: Constant::analytic(self.fixed_point_value().norm()),
            mu1: Constant::analytic(1.0),
            l_phi_tilde: Constant::analytic(self.q),
            sigma1_lower: Constant::analytic(var),
            sigma_lam1: Constant::analytic(2.0 * var),
            ..Default::default()
        };
        c.sigma_lam2 = Constant::analytic(c.derived_sigma_lam2());
        Some(c)
    }
}
