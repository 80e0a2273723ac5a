use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::invalid;
use crate::problem::{Constant, MinimizationForm, ProblemConstants, StochasticFixedPointProblem};
use crate::rng::SampleKey;
use crate::{RealVec, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum NoiseMode {
    #[default]
    None,
    /// `Φ̂ = Φ + s ξ`, `ξ ~ N(0, I)`.
    Additive(f64),
    /// `Φ̂ = w − α(Aw − (1 + s ξ) Bλ)`, scalar `ξ ~ N(0, 1)`: the
    /// λ-Jacobian becomes random.
    LambdaMultiplicative(f64),
}

/// Lower objective `½wᵀAw − (Bλ)ᵀw`, upper objective `½‖w − w_target‖²`,
/// `Φ(w, λ) = w − α(Aw − Bλ)` with `α = 2/(τ + L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticBilevel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w_target: RealVec,
    pub noise: NoiseMode,
    pub alpha: f64,
    pub q: f64,
    a_inv: DMatrix<f64>,
    b_norm: f64,
}

pub fn quadratic_bilevel(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    w_target: RealVec,
    noise: NoiseMode,
) -> Result<QuadraticBilevel> {
    let d = a.nrows();
    if d == 0 || a.ncols() != d {
        return Err(invalid("A must be square and non-empty"));
    }
    if b.nrows() != d || b.ncols() == 0 || w_target.len() != d {
        return Err(invalid("B must be d×m and w_target of length d"));
    }
    let scale = a.amax().max(1.0);
    if (&a - a.transpose()).amax() > 1e-12 * scale {
        return Err(invalid("A must be symmetric"));
    }
    let eig = a.clone().symmetric_eigenvalues();
    let (tau, l) = (eig.min(), eig.max());
    if !(tau > 0.0) {
        return Err(invalid(format!(
            "A must be positive definite, smallest eigenvalue {tau}"
        )));
    }
    let s = match noise {
        NoiseMode::None => 0.0,
        NoiseMode::Additive(s) | NoiseMode::LambdaMultiplicative(s) => s,
    };
    if !(s >= 0.0 && s.is_finite()) {
        return Err(invalid(format!("noise std {s} must be ≥ 0")));
    }
    let a_inv = a.clone().try_inverse().ok_or_else(|| invalid("A is singular"))?;
    let b_norm = b.clone().singular_values().max();
    Ok(QuadraticBilevel {
        alpha: 2.0 / (tau + l),
        q: (l - tau) / (l + tau),
        a,
        b,
        w_target,
        noise,
        a_inv,
        b_norm,
    })
}

/// `A = diag(2, 4)`, `B = I₂`, `w_target = (1, 1)`.
pub fn canonical_quadratic(noise: NoiseMode) -> QuadraticBilevel {
    quadratic_bilevel(
        DMatrix::from_diagonal(&RealVec::from_vec(vec![2.0, 4.0])),
        DMatrix::identity(2, 2),
        RealVec::from_vec(vec![1.0, 1.0]),
        noise,
    )
    .expect("canonical instance is valid")
}

/// `∇f(λ) = Bᵀ A⁻¹ (A⁻¹Bλ − w_target)`.
pub fn quadratic_exact_hypergrad(p: &QuadraticBilevel, lambda: &RealVec) -> RealVec {
    p.b.tr_mul(&(&p.a_inv * (p.solution(lambda) - &p.w_target)))
}

impl QuadraticBilevel {
    /// `w(λ) = A⁻¹Bλ`.
    pub fn solution(&self, lambda: &RealVec) -> RealVec {
        &self.a_inv * (&self.b * lambda)
    }

    /// `v(w) = (αA)⁻¹ (w − w_target)`.
    pub fn linear_solution(&self, w: &RealVec) -> RealVec {
        &self.a_inv * (w - &self.w_target) / self.alpha
    }

    /// `E‖Φ̂(w(λ)) − Φ(w(λ))‖²`.
    pub fn noise_variance(&self, lambda: &RealVec) -> f64 {
        match self.noise {
            NoiseMode::None => 0.0,
            NoiseMode::Additive(s) => self.a.nrows() as f64 * s * s,
            NoiseMode::LambdaMultiplicative(s) => (self.alpha * s * (&self.b * lambda).norm()).powi(2),
        }
    }

    /// Bound on `E‖∂₂Φ̂ − ∂₂Φ‖²`.
    pub fn m2(&self) -> f64 {
        match self.noise {
            NoiseMode::LambdaMultiplicative(s) => (self.alpha * s * self.b_norm).powi(2),
            _ => 0.0,
        }
    }

    fn coupling_factor(&self, key: SampleKey) -> f64 {
        match self.noise {
            NoiseMode::LambdaMultiplicative(s) if s > 0.0 => 1.0 + s * key.rng().sample::<f64, _>(StandardNormal),
            _ => 1.0,
        }
    }
}

impl StochasticFixedPointProblem for QuadraticBilevel {
    fn dim_w(&self) -> usize {
        self.a.nrows()
    }

    fn dim_lambda(&self) -> usize {
        self.b.ncols()
    }

    fn phi_mean(&self, w: &RealVec, lambda: &RealVec) -> RealVec {
        w - (&self.a * w - &self.b * lambda) * self.alpha
    }

    fn phi_sample(&self, w: &RealVec, lambda: &RealVec, key: SampleKey) -> RealVec {
        match self.noise {
            NoiseMode::None => self.phi_mean(w, lambda),
            NoiseMode::Additive(s) => {
                let mut out = self.phi_mean(w, lambda);
                let mut rng = key.rng();
                for x in out.iter_mut() {
                    *x += s * rng.sample::<f64, _>(StandardNormal);
                }
                out
            }
            NoiseMode::LambdaMultiplicative(_) => {
                let f = self.coupling_factor(key);
                w - (&self.a * w - &self.b * lambda * f) * self.alpha
            }
        }
    }

    fn jvp1_t_mean(&self, _w: &RealVec, _lambda: &RealVec, v: &RealVec) -> RealVec {
        v - &self.a * v * self.alpha
    }

    fn jvp1_t_sample(&self, w: &RealVec, lambda: &RealVec, _key: SampleKey, v: &RealVec) -> RealVec {
        self.jvp1_t_mean(w, lambda, v)
    }

    fn jvp2_t_mean(&self, _w: &RealVec, _lambda: &RealVec, v: &RealVec) -> RealVec {
        self.b.tr_mul(v) * self.alpha
    }

    fn jvp2_t_sample(&self, _w: &RealVec, _lambda: &RealVec, key: SampleKey, v: &RealVec) -> RealVec {
        self.b.tr_mul(v) * (self.alpha * self.coupling_factor(key))
    }

    fn upper_value(&self, w: &RealVec, _lambda: &RealVec) -> f64 {
        0.5 * (w - &self.w_target).norm_squared()
    }

    fn upper_grad1(&self, w: &RealVec, _lambda: &RealVec) -> RealVec {
        w - &self.w_target
    }

    fn upper_grad2(&self, _w: &RealVec, _lambda: &RealVec) -> RealVec {
        RealVec::zeros(self.dim_lambda())
    }

    fn fixed_point(&self, lambda: &RealVec) -> Option<RealVec> {
        Some(self.solution(lambda))
    }

    fn exact_hypergrad(&self, lambda: &RealVec) -> Option<RealVec> {
        Some(quadratic_exact_hypergrad(self, lambda))
    }

    fn jvp1_mean(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> Option<RealVec> {
        Some(self.jvp1_t_mean(w, lambda, v))
    }

    fn minimization_form(&self) -> Option<&dyn MinimizationForm> {
        Some(self)
    }

    fn contraction_modulus(&self, _lambda: &RealVec) -> Option<f64> {
        Some(self.q)
    }

    /// `E` is not globally Lipschitz, so `L_E` is the supremum of `‖∇₁E‖`
    /// over the ball of radius `‖w(λ)‖` around `w(λ)`, which contains the
    /// starting point `0`.
    fn constants(&self, lambda: &RealVec) -> Option<ProblemConstants> {
        let w = self.solution(lambda);
        let var = self.noise_variance(lambda);
        let mut c = ProblemConstants {
            q: Constant::analytic(self.q),
            l_e: Constant::analytic((&w - &self.w_target).norm() + w.norm()),
            mu1: Constant::analytic(1.0),
            l_phi: Constant::analytic(self.alpha * self.b_norm),
            l_phi_tilde: Constant::analytic(self.q),
            m2: Constant::analytic(self.m2()),
            sigma1_lower: Constant::analytic(var),
            sigma_lam1: Constant::analytic(2.0 * var),
            ..Default::default()
        };
        c.sigma_lam2 = Constant::analytic(c.derived_sigma_lam2());
        Some(c)
    }
}

impl MinimizationForm for QuadraticBilevel {
    fn step_size(&self, _lambda: &RealVec) -> f64 {
        self.alpha
    }

    fn lower_hvp(&self, _w: &RealVec, _lambda: &RealVec, v: &RealVec) -> RealVec {
        &self.a * v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{check_unbiasedness, check_unbiasedness_jvp, estimate_contraction, JacobianSide};
    use approx::assert_relative_eq;

    fn v2(a: f64, b: f64) -> RealVec {
        RealVec::from_vec(vec![a, b])
    }

    #[test]
    fn canonical_constants() {
        let p = canonical_quadratic(NoiseMode::None);
        assert_relative_eq!(p.alpha, 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(p.q, 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(p.solution(&v2(2.0, 4.0)), v2(1.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn exact_hypergrad_examples() {
        let p = canonical_quadratic(NoiseMode::None);
        assert_relative_eq!(
            quadratic_exact_hypergrad(&p, &v2(2.0, 4.0)),
            v2(0.0, 0.0),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            quadratic_exact_hypergrad(&p, &v2(0.0, 0.0)),
            v2(-0.5, -0.25),
            epsilon = 1e-15
        );
        // affine in λ: g(λ₁ + λ₂) − g(λ₁) − g(λ₂) = −g(0)
        let (l1, l2) = (v2(0.3, -1.2), v2(2.5, 0.7));
        let lhs = quadratic_exact_hypergrad(&p, &(&l1 + &l2))
            - quadratic_exact_hypergrad(&p, &l1)
            - quadratic_exact_hypergrad(&p, &l2);
        assert_relative_eq!(lhs, -quadratic_exact_hypergrad(&p, &v2(0.0, 0.0)), epsilon = 1e-14);
    }

    #[test]
    fn exact_hypergrad_matches_finite_differences() {
        let a = DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.0, 0.5, 2.0, 0.3, 0.0, 0.3, 1.5]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, -0.2, 0.4]);
        let p = quadratic_bilevel(a, b, RealVec::from_vec(vec![0.2, -0.1, 0.7]), NoiseMode::None).unwrap();
        let lam = v2(0.4, -0.9);
        let f = |l: &RealVec| p.upper_value(&p.solution(l), l);
        let h = 1e-6;
        let g = quadratic_exact_hypergrad(&p, &lam);
        for i in 0..2 {
            let mut e = RealVec::zeros(2);
            e[i] = h;
            let fd = (f(&(&lam + &e)) - f(&(&lam - &e))) / (2.0 * h);
            assert_relative_eq!(g[i], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn rejects_non_spd() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(quadratic_bilevel(a, DMatrix::identity(2, 2), v2(0.0, 0.0), NoiseMode::None).is_err());
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(quadratic_bilevel(a, DMatrix::identity(2, 2), v2(0.0, 0.0), NoiseMode::None).is_err());
    }

    #[test]
    fn linear_solution_matches_dense_solve() {
        let p = canonical_quadratic(NoiseMode::None);
        let w = v2(0.3, -0.4);
        let m = DMatrix::identity(2, 2) - (DMatrix::identity(2, 2) - &p.a * p.alpha).transpose();
        let dense = m.lu().solve(&(&w - &p.w_target)).unwrap();
        assert_relative_eq!(p.linear_solution(&w), dense, epsilon = 1e-12);
    }

    #[test]
    fn samplers_are_unbiased_and_contracting() {
        let lam = v2(1.0, 1.0);
        let w = v2(0.2, -0.3);
        for noise in [
            NoiseMode::None,
            NoiseMode::Additive(0.3),
            NoiseMode::LambdaMultiplicative(1.0),
        ] {
            let p = canonical_quadratic(noise);
            assert!(check_unbiasedness(&p, &w, &lam, 4000, 5).unwrap().within(4.0));
            let r = check_unbiasedness_jvp(&p, JacobianSide::Lambda, &w, &lam, &v2(1.0, -2.0), 4000, 6).unwrap();
            assert!(r.within(4.0));
            let q = estimate_contraction(&p, &lam, 3, 200, 0).unwrap();
            assert!(q.verified && (q.q_est - p.q).abs() < 1e-8);
            let ws = p.fixed_point(&lam).unwrap();
            assert!((p.phi_mean(&ws, &lam) - &ws).norm() <= 1e-9);
        }
    }

    #[test]
    fn noise_constants() {
        let p = canonical_quadratic(NoiseMode::LambdaMultiplicative(1.0));
        assert_relative_eq!(p.m2(), 1.0 / 9.0, epsilon = 1e-15);
        let p = canonical_quadratic(NoiseMode::Additive(0.5));
        assert_eq!(p.m2(), 0.0);
        assert_relative_eq!(p.noise_variance(&v2(1.0, 1.0)), 0.5);
    }
}
