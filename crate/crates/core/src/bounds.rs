//! Closed-form bounds and rate constants for the bias, variance and
//! mean-square error of the hypergradient estimator and for the
//! Krasnoselskii–Mann iterations on the two subproblems.

use crate::error::invalid;
use crate::problem::ProblemConstants;
use crate::{Error, Result};

const MIN_GAP: f64 = 1e-12;

fn one_minus_q(q: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::NotContraction(q));
    }
    let gap = 1.0 - q;
    if gap < MIN_GAP {
        return Err(Error::DenominatorTooSmall(gap));
    }
    Ok(gap)
}

fn nonneg(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(invalid(format!("{name} must be finite and ≥ 0, got {x}")));
    }
    Ok(())
}

/// Subproblem convergence rate `t ↦ E‖x_t − x*‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateFunction {
    /// `c / (γ + t)`.
    PowerLaw {
        c: f64,
        gamma: f64,
    },
    /// `r^t (init − floor) + floor`.
    Geometric {
        r: f64,
        floor: f64,
        init: f64,
    },
    Zero,
}

impl RateFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            RateFunction::PowerLaw { c, gamma } => c / (gamma + t),
            RateFunction::Geometric { r, floor, init } => r.powf(t) * (init - floor) + floor,
            RateFunction::Zero => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RateFunction::PowerLaw { c, gamma } => {
                nonneg("c", c)?;
                if !(gamma.is_finite() && gamma > 0.0) {
                    return Err(invalid(format!("γ must be positive, got {gamma}")));
                }
            }
            RateFunction::Geometric { r, floor, init } => {
                if !(0.0..1.0).contains(&r) {
                    return Err(invalid(format!("geometric ratio must lie in [0, 1), got {r}")));
                }
                nonneg("floor", floor)?;
                nonneg("init", init)?;
            }
            RateFunction::Zero => {}
        }
        Ok(())
    }
}

/// `c₁ = μ₂ + (μ₁ L_Φ + ν₁ L_E)/(1 − q) + ν₁ L_E L_Φ/(1 − q)²`.
pub fn c1_constant(c: &ProblemConstants) -> Result<f64> {
    let g = one_minus_q(c.q.value)?;
    let (mu1, mu2, nu1) = (c.mu1.value, c.mu2.value, c.nu1.value);
    let (l_e, l_phi) = (c.l_e.value, c.l_phi.value);
    Ok(mu2 + (mu1 * l_phi + nu1 * l_e) / g + nu1 * l_e * l_phi / (g * g))
}

/// `c₁√ρ + L_Φ√σ + ν₂√ρ√σ`.
pub fn bias_bound(c: &ProblemConstants, rho_t: f64, sigma_k: f64) -> Result<f64> {
    nonneg("ρ(t)", rho_t)?;
    nonneg("σ(k)", sigma_k)?;
    let c1 = c1_constant(c)?;
    let (sr, ss) = (rho_t.sqrt(), sigma_k.sqrt());
    Ok(c1 * sr + c.l_phi.value * ss + c.nu2.value * sr * ss)
}

/// `(inner, outer)` variance bounds.
pub fn variance_bounds(c: &ProblemConstants, rho_t: f64, sigma_k: f64) -> Result<(f64, f64)> {
    nonneg("ρ(t)", rho_t)?;
    nonneg("σ(k)", sigma_k)?;
    let g = one_minus_q(c.q.value)?;
    let c1 = c1_constant(c)?;
    let (m2, l_e, l_phi, nu2) = (c.m2.value, c.l_e.value, c.l_phi.value, c.nu2.value);
    let inner =
        2.0 * m2 * l_e * l_e / (g * g) + 2.0 * (l_phi * l_phi + m2) * sigma_k + 2.0 * nu2 * nu2 * rho_t * sigma_k;
    let outer = 3.0 * (c1 * c1 * rho_t + l_phi * l_phi * sigma_k + nu2 * nu2 * rho_t * sigma_k);
    Ok((inner, outer))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MseBound {
    pub total: f64,
    /// Part of `total` that does not vanish as `t, k → ∞`.
    pub floor: f64,
    /// Set when some constant was estimated rather than derived.
    pub indicative: bool,
}

pub fn mse_bound(c: &ProblemConstants, rho_t: f64, sigma_k: f64) -> Result<MseBound> {
    nonneg("ρ(t)", rho_t)?;
    nonneg("σ(k)", sigma_k)?;
    let g = one_minus_q(c.q.value)?;
    let c1 = c1_constant(c)?;
    let (m2, l_e, l_phi, nu2) = (c.m2.value, c.l_e.value, c.l_phi.value, c.nu2.value);
    let floor = 2.0 * m2 * l_e * l_e / (g * g);
    let total =
        floor + 6.0 * c1 * c1 * rho_t + 2.0 * (4.0 * l_phi * l_phi + m2) * sigma_k + 8.0 * nu2 * nu2 * rho_t * sigma_k;
    Ok(MseBound {
        total,
        floor,
        indicative: c.any_estimated(),
    })
}

/// MSE bound with the two subproblem rates plugged in at `(t, k)`.
pub fn composed_mse_bound(
    c: &ProblemConstants,
    rho: &RateFunction,
    sigma: &RateFunction,
    t: f64,
    k: f64,
) -> Result<MseBound> {
    mse_bound(c, rho.eval(t), sigma.eval(k))
}

/// Constant-step envelope
/// `(1 − η(1 − q²))^t (mse₀ − ησ₁/(1 − q²)) + ησ₁/(1 − q²)`.
pub fn km_constant_envelope(q: f64, sigma1: f64, eta: f64, mse0: f64, t: f64) -> Result<f64> {
    one_minus_q(q)?;
    let contr = 1.0 - q * q;
    let limit = eta * sigma1 / contr;
    Ok((1.0 - eta * contr).powf(t) * (mse0 - limit) + limit)
}

/// `c = max{γ mse₀, β²σ₁/(β(1 − q²) − 1)}` for the envelope `c/(γ + t)`.
pub fn km_decreasing_c(q: f64, sigma1: f64, beta: f64, gamma: f64, mse0: f64) -> Result<f64> {
    one_minus_q(q)?;
    let den = beta * (1.0 - q * q) - 1.0;
    if den <= 0.0 {
        return Err(Error::InadmissibleSchedule(format!(
            "β = {beta} must exceed 1/(1 − q²) = {}",
            1.0 / (1.0 - q * q)
        )));
    }
    Ok((gamma * mse0).max(beta * beta * sigma1 / den))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SgdStep {
    Constant(f64),
    Decreasing { beta: f64, gamma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlphaChoice {
    /// `α = 1/L`.
    InvL,
    /// `α = 2/(L + τ)`.
    TwoOverLPlusTau,
}

/// Rates of SGD viewed as stochastic KM on `Φ = w − α∇ℓ`.
///
/// `r1`, `r2` are the contraction factor and asymptotic level of the
/// constant-step bound, `r3` the constant of the `r3/(γ + t)` decreasing-step
/// bound, `beta_min` the admissibility threshold on `β`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdRates {
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub r3: Option<f64>,
    pub beta_min: f64,
}

pub fn sgd_rates(
    l: f64,
    tau: f64,
    sigma1_prime: f64,
    _sigma2_prime: f64,
    step: SgdStep,
    alpha: AlphaChoice,
) -> Result<SgdRates> {
    if !(tau > 0.0 && tau <= l && l.is_finite()) {
        return Err(invalid(format!("need 0 < τ ≤ L, got τ = {tau}, L = {l}")));
    }
    nonneg("σ₁′", sigma1_prime)?;
    let (denom_r2, beta_min) = match alpha {
        AlphaChoice::InvL => (tau * (2.0 * l - tau), l * l / (tau * (2.0 * l - tau))),
        AlphaChoice::TwoOverLPlusTau => (tau * l, (l + tau).powi(2) / (4.0 * tau * l)),
    };
    let mut out = SgdRates {
        r1: None,
        r2: None,
        r3: None,
        beta_min,
    };
    match step {
        SgdStep::Constant(eta) => {
            let r1 = match alpha {
                AlphaChoice::InvL => 1.0 - (eta * tau / l) * (2.0 - tau / l),
                AlphaChoice::TwoOverLPlusTau => 1.0 - 4.0 * eta * tau * l / (l + tau).powi(2),
            };
            out.r1 = Some(r1);
            out.r2 = Some(eta * sigma1_prime / denom_r2);
        }
        SgdStep::Decreasing { beta, gamma: _ } => {
            if beta <= beta_min {
                return Err(Error::InadmissibleSchedule(format!(
                    "β = {beta} must exceed {beta_min}"
                )));
            }
            let r3 = match alpha {
                AlphaChoice::InvL => beta * beta * sigma1_prime / (beta * tau * (2.0 * l - tau) - l * l),
                AlphaChoice::TwoOverLPlusTau => {
                    4.0 * beta * beta * sigma1_prime / (4.0 * beta * tau * l - (l + tau).powi(2))
                }
            };
            out.r3 = Some(r3);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BottouRates {
    pub r1: f64,
    pub r2: f64,
}

/// Classical constant-step SGD rates, `1 − ητ/L` and `ησ₁′/(2τ)`.
pub fn bottou_rates(l: f64, tau: f64, eta: f64, sigma1_prime: f64) -> Result<BottouRates> {
    if !(tau > 0.0 && tau <= l && l.is_finite()) {
        return Err(invalid(format!("need 0 < τ ≤ L, got τ = {tau}, L = {l}")));
    }
    Ok(BottouRates {
        r1: 1.0 - eta * tau / l,
        r2: eta * sigma1_prime / (2.0 * tau),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubproblemRates {
    pub d_w: f64,
    pub d_v: f64,
    pub sigma_lam1: f64,
    pub sigma_lam2: f64,
}

impl SubproblemRates {
    pub fn rho(&self, gamma: f64) -> RateFunction {
        RateFunction::PowerLaw { c: self.d_w, gamma }
    }

    pub fn sigma(&self, gamma: f64) -> RateFunction {
        RateFunction::PowerLaw { c: self.d_v, gamma }
    }
}

/// Power-law constants of both subproblems under the decreasing schedule
/// `β/(γ + t)`, taking `σ_{λ,1}` from `consts`.
pub fn subproblem_rate_constants(
    c: &ProblemConstants,
    beta: f64,
    gamma: f64,
    w_lambda_norm: f64,
    grad1e_norm: f64,
) -> Result<SubproblemRates> {
    let q = c.q.value;
    let g = one_minus_q(q)?;
    let lt = c.l_phi_tilde.value;
    let sigma_lam1 = c.sigma_lam1.value;
    let sigma_lam2 = 2.0 * (lt * lt + q * q) / (g * g);
    let den = beta * (1.0 - q * q) - 1.0;
    if den <= 0.0 {
        return Err(Error::InadmissibleSchedule(format!(
            "β = {beta} must exceed 1/(1 − q²) = {}",
            1.0 / (1.0 - q * q)
        )));
    }
    if gamma < beta * (1.0 + sigma_lam2) * (1.0 - 1e-12) {
        return Err(Error::InadmissibleSchedule(format!(
            "γ = {gamma} must be at least β(1 + σ_λ2) = {}",
            beta * (1.0 + sigma_lam2)
        )));
    }
    let d_w = (gamma * w_lambda_norm * w_lambda_norm).max(beta * beta * sigma_lam1 / den);
    let d_v = grad1e_norm * grad1e_norm / (g * g) * gamma.max(2.0 * beta * beta * lt * lt / den);
    Ok(SubproblemRates {
        d_w,
        d_v,
        sigma_lam1,
        sigma_lam2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Constant;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn consts(pairs: &[(&str, f64)]) -> ProblemConstants {
        let mut c = ProblemConstants::default();
        for (k, v) in pairs {
            *c.field_mut(k).unwrap() = Constant::analytic(*v);
        }
        c
    }

    #[test]
    fn c1_examples() {
        assert_eq!(c1_constant(&consts(&[("q", 0.5)])).unwrap(), 0.0);
        let c = consts(&[("mu2", 1.0), ("mu1", 1.0), ("nu1", 1.0), ("l_e", 1.0), ("l_phi", 1.0)]);
        assert_relative_eq!(c1_constant(&c).unwrap(), 4.0);
        let mut near = c;
        near.q = Constant::analytic(1.0 - 1e-9);
        assert!(c1_constant(&near).unwrap() > 1e17);
        near.q = Constant::analytic(1.0 - 1e-14);
        assert!(matches!(c1_constant(&near), Err(Error::DenominatorTooSmall(_))));
        near.q = Constant::analytic(1.0);
        assert!(matches!(c1_constant(&near), Err(Error::NotContraction(_))));
    }

    #[test]
    fn bias_examples() {
        let c = consts(&[("mu2", 4.0), ("l_phi", 1.0), ("nu2", 1.0)]);
        assert_eq!(bias_bound(&c, 0.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(bias_bound(&c, 0.04, 0.01).unwrap(), 0.92, epsilon = 1e-14);
        assert_relative_eq!(bias_bound(&c, 0.04, 0.0).unwrap(), 0.8, epsilon = 1e-14);
        assert!(bias_bound(&c, -1.0, 0.0).is_err());
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance_bounds(&consts(&[]), 0.0, 0.0).unwrap(), (0.0, 0.0));
        let (inner, _) = variance_bounds(&consts(&[("m2", 1.0), ("l_e", 1.0)]), 0.0, 0.0).unwrap();
        assert_eq!(inner, 2.0);
        let c = consts(&[("mu2", 4.0), ("l_phi", 1.0)]);
        let (_, outer) = variance_bounds(&c, 0.04, 0.01).unwrap();
        assert_relative_eq!(outer, 1.95, epsilon = 1e-13);
    }

    #[test]
    fn mse_examples() {
        let b = mse_bound(&consts(&[]), 0.0, 0.0).unwrap();
        assert_eq!((b.total, b.floor), (0.0, 0.0));
        let c = consts(&[("mu2", 1.0), ("l_phi", 1.0)]);
        for (t, k) in [(10.0, 20.0), (3.0, 7.0)] {
            assert_relative_eq!(
                mse_bound(&c, 1.0 / t, 1.0 / k).unwrap().total,
                6.0 / t + 8.0 / k,
                epsilon = 1e-14
            );
        }
        let b = mse_bound(&consts(&[("m2", 1.0), ("l_e", 1.0)]), 0.0, 0.0).unwrap();
        assert_eq!((b.total, b.floor), (2.0, 2.0));
        assert!(!b.indicative);
        let mut est = consts(&[]);
        est.m2 = Constant::estimated(0.5);
        assert!(mse_bound(&est, 0.0, 0.0).unwrap().indicative);
    }

    #[test]
    fn constant_envelope_examples() {
        assert_eq!(km_constant_envelope(0.0, 0.0, 1.0, 4.0, 1.0).unwrap(), 0.0);
        let v = km_constant_envelope(0.5, 0.0, 0.3, 2.0, 7.0).unwrap();
        assert_relative_eq!(v, 2.0 * (1.0 - 0.3 * 0.75f64).powi(7), max_relative = 1e-14);

        // equality case of e_{t+1} = (1 − η(1 − q²)) e_t + η²σ₁
        let (q, eta, s1, mse0): (f64, f64, f64, f64) = (0.9, 0.05, 1.0, 10.0);
        let a = 1.0 - eta * (1.0 - q * q);
        let mut e2 = mse0;
        for _ in 0..100 {
            e2 = a * e2 + eta * eta * s1;
        }
        let limit = eta * s1 / (1.0 - q * q);
        assert_relative_eq!(
            km_constant_envelope(q, s1, eta, mse0, 100.0).unwrap(),
            e2,
            max_relative = 1e-12
        );

        let far = km_constant_envelope(q, s1, eta, mse0, 1e6).unwrap();
        assert_relative_eq!(far, limit, max_relative = 1e-9);
    }

    #[test]
    fn decreasing_c_examples() {
        assert_eq!(km_decreasing_c(0.5, 0.0, 4.0, 4.0, 3.0).unwrap(), 12.0);
        assert_relative_eq!(km_decreasing_c(0.5, 1.0, 4.0, 4.0, 0.0).unwrap(), 16.0 / 2.0);
        assert_eq!(km_decreasing_c(0.0, 1.0, 2.0, 2.0, 1.0).unwrap(), 4.0);
        assert!(matches!(
            km_decreasing_c(0.0, 1.0, 1.0, 2.0, 1.0),
            Err(Error::InadmissibleSchedule(_))
        ));
    }

    #[test]
    fn sgd_examples() {
        let r = sgd_rates(1.0, 1.0, 0.7, 0.0, SgdStep::Constant(1.0), AlphaChoice::InvL).unwrap();
        assert_eq!(r.r1, Some(0.0));
        assert_relative_eq!(r.r2.unwrap(), 0.7);
        let a = sgd_rates(3.0, 3.0, 1.0, 0.0, SgdStep::Constant(0.4), AlphaChoice::InvL).unwrap();
        let b = sgd_rates(3.0, 3.0, 1.0, 0.0, SgdStep::Constant(0.4), AlphaChoice::TwoOverLPlusTau).unwrap();
        assert_relative_eq!(a.r1.unwrap(), b.r1.unwrap(), epsilon = 1e-15);
        let r = sgd_rates(2.0, 1.0, 1.0, 0.0, SgdStep::Constant(0.5), AlphaChoice::TwoOverLPlusTau).unwrap();
        assert_relative_eq!(r.r1.unwrap(), 5.0 / 9.0, epsilon = 1e-15);
        assert!(sgd_rates(1.0, 2.0, 1.0, 0.0, SgdStep::Constant(0.5), AlphaChoice::InvL).is_err());
        let bad = SgdStep::Decreasing { beta: 1.0, gamma: 1.0 };
        assert!(sgd_rates(2.0, 1.0, 1.0, 0.0, bad, AlphaChoice::InvL).is_err());
        let ok = SgdStep::Decreasing { beta: 10.0, gamma: 1.0 };
        let r = sgd_rates(2.0, 1.0, 1.0, 0.0, ok, AlphaChoice::InvL).unwrap();
        assert_relative_eq!(r.r3.unwrap(), 100.0 / (30.0 - 4.0));
    }

    #[test]
    fn bottou_examples() {
        assert_eq!(bottou_rates(2.0, 2.0, 1.0, 1.0).unwrap().r1, 0.0);
        assert_eq!(bottou_rates(2.0, 1.0, 0.5, 1.0).unwrap().r1, 0.75);
        assert_eq!(bottou_rates(2.0, 1.0, 0.5, 0.0).unwrap().r2, 0.0);
    }

    #[test]
    fn subproblem_examples() {
        let c = consts(&[("l_phi_tilde", 1.0), ("sigma_lam1", 1.0)]);
        let r = subproblem_rate_constants(&c, 2.0, 6.0, 1.0, 0.0).unwrap();
        assert_eq!(r.sigma_lam2, 2.0);
        assert_eq!(r.d_w, 6.0);
        assert_eq!(r.d_v, 0.0);
        let r = subproblem_rate_constants(&c, 2.0, 6.0, 0.0, 1.0).unwrap();
        assert_eq!(r.d_w, 4.0);
        assert_eq!(r.d_v, 8.0);
        assert!(subproblem_rate_constants(&c, 2.0, 5.0, 0.0, 1.0).is_err());
        assert!(subproblem_rate_constants(&c, 1.0, 6.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn rate_functions() {
        assert_eq!(RateFunction::Zero.eval(3.0), 0.0);
        assert_eq!(RateFunction::PowerLaw { c: 6.0, gamma: 2.0 }.eval(1.0), 2.0);
        assert_eq!(
            RateFunction::Geometric {
                r: 0.5,
                floor: 1.0,
                init: 3.0
            }
            .eval(1.0),
            2.0
        );
        assert!(RateFunction::Geometric {
            r: 1.0,
            floor: 0.0,
            init: 1.0
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn ours_beats_bottou_r1(l in 0.01f64..100.0, frac in 0.001f64..1.0, eta in 0.001f64..1.0) {
            let tau = l * frac;
            let ours = sgd_rates(l, tau, 1.0, 0.0, SgdStep::Constant(eta), AlphaChoice::InvL).unwrap().r1.unwrap();
            let theirs = bottou_rates(l, tau, eta, 1.0).unwrap().r1;
            prop_assert!(ours <= theirs + 1e-15);
        }

        #[test]
        fn mse_monotone(q in 0.0f64..0.99, m2 in 0.0f64..5.0, rho in 0.0f64..5.0, sig in 0.0f64..5.0, d in 0.0f64..1.0) {
            let c = consts(&[("q", q), ("m2", m2), ("l_e", 1.3), ("l_phi", 0.7), ("nu2", 0.4), ("mu1", 0.2), ("nu1", 0.1), ("mu2", 0.5)]);
            let base = mse_bound(&c, rho, sig).unwrap();
            prop_assert!(base.total >= base.floor);
            prop_assert!(mse_bound(&c, rho + d, sig).unwrap().total >= base.total);
            prop_assert!(mse_bound(&c, rho, sig + d).unwrap().total >= base.total);
            let mut c2 = c;
            c2.m2 = Constant::analytic(m2 + d);
            prop_assert!(mse_bound(&c2, rho, sig).unwrap().total >= base.total);
            let exact = mse_bound(&c, 0.0, 0.0).unwrap();
            prop_assert_eq!(exact.total, exact.floor);
        }
    }
}
