//! Every bound formula against a second implementation written from the
//! expanded algebra, on random admissible constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sid_core::bounds::*;
use sid_core::{Constant, ProblemConstants};

const TOL: f64 = 1e-12;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

struct Tuple {
    c: ProblemConstants,
    rho: f64,
    sigma: f64,
    eta: f64,
    mse0: f64,
    t: f64,
    l: f64,
    tau: f64,
    w_norm: f64,
    g_norm: f64,
}

fn draw(rng: &mut ChaCha8Rng) -> Tuple {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let c = ProblemConstants {
        q: Constant::analytic(u(0.0, 0.98)),
        l_e: Constant::analytic(u(0.0, 5.0)),
        nu1: Constant::analytic(u(0.0, 2.0)),
        nu2: Constant::analytic(u(0.0, 2.0)),
        mu1: Constant::analytic(u(0.0, 2.0)),
        mu2: Constant::analytic(u(0.0, 2.0)),
        l_phi: Constant::analytic(u(0.0, 3.0)),
        l_phi_tilde: Constant::analytic(u(0.0, 3.0)),
        m2: Constant::analytic(u(0.0, 1.0)),
        sigma1_lower: Constant::analytic(u(0.0, 1.0)),
        sigma2_lower: Constant::analytic(u(0.0, 1.0)),
        sigma_lam1: Constant::analytic(u(0.0, 1.0)),
        sigma_lam2: Constant::analytic(0.0),
    };
    let l = u(0.1, 50.0);
    Tuple {
        c,
        rho: u(0.0, 10.0),
        sigma: u(0.0, 10.0),
        eta: u(0.01, 1.0),
        mse0: u(0.0, 10.0),
        t: u(0.0, 500.0).floor(),
        l,
        tau: l * u(0.01, 1.0),
        w_norm: u(0.0, 5.0),
        g_norm: u(0.0, 5.0),
    }
}

fn c1_alt(c: &ProblemConstants) -> f64 {
    let g = 1.0 - c.q.value;
    let num = c.mu2.value * g * g
        + (c.mu1.value * c.l_phi.value + c.nu1.value * c.l_e.value) * g
        + c.nu1.value * c.l_e.value * c.l_phi.value;
    num / (g * g)
}

#[test]
fn bound_formulas_agree_with_reimplementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut check = |name: &str, a: f64, b: f64| {
        let r = rel(a, b);
        assert!(r <= TOL, "{name}: {a} vs {b}");
        worst = worst.max(r);
    };
    for _ in 0..100 {
        let Tuple {
            c,
            rho,
            sigma,
            eta,
            mse0,
            t,
            l,
            tau,
            w_norm,
            g_norm,
        } = draw(&mut rng);
        let q = c.q.value;
        let g = 1.0 - q;
        let (le, lp, lt, m2, nu2) = (c.l_e.value, c.l_phi.value, c.l_phi_tilde.value, c.m2.value, c.nu2.value);
        let c1 = c1_alt(&c);
        check("c1", c1_constant(&c).unwrap(), c1);

        let bias = c1 * rho.sqrt() + lp * sigma.sqrt() + nu2 * (rho * sigma).sqrt();
        check("bias", bias_bound(&c, rho, sigma).unwrap(), bias);

        let floor = 2.0 * m2 * (le / g).powi(2);
        let (inner, outer) = variance_bounds(&c, rho, sigma).unwrap();
        check(
            "inner",
            inner,
            floor + 2.0 * lp * lp * sigma + 2.0 * m2 * sigma + 2.0 * nu2 * nu2 * rho * sigma,
        );
        check(
            "outer",
            outer,
            3.0 * c1 * c1 * rho + 3.0 * lp * lp * sigma + 3.0 * nu2 * nu2 * rho * sigma,
        );

        let mse = mse_bound(&c, rho, sigma).unwrap();
        let total =
            floor + 6.0 * (c1 * c1) * rho + (8.0 * lp * lp + 2.0 * m2) * sigma + 8.0 * (nu2 * nu2) * (rho * sigma);
        check("mse", mse.total, total);
        check("floor", mse.floor, floor);

        let s1 = c.sigma1_lower.value;
        let a = (1.0 - q) * (1.0 + q);
        let lim = eta * s1 / a;
        let env = lim + (t * (1.0 - eta * a).ln()).exp() * (mse0 - lim);
        check(
            "constant envelope",
            km_constant_envelope(q, s1, eta, mse0, t).unwrap(),
            env,
        );

        let beta = (1.0 + rng.random_range(0.05..3.0)) / a;
        let gamma = beta * (1.0 + rng.random_range(0.0..5.0));
        let dc = if gamma * mse0 > s1 * beta * beta / (beta * a - 1.0) {
            gamma * mse0
        } else {
            s1 * beta * beta / (beta * a - 1.0)
        };
        check("decreasing c", km_decreasing_c(q, s1, beta, gamma, mse0).unwrap(), dc);

        let s1p = c.sigma_lam1.value;
        let (x, ratio) = (tau / l, eta * tau / l);
        let r = sgd_rates(l, tau, s1p, 0.0, SgdStep::Constant(eta), AlphaChoice::InvL).unwrap();
        check("r1 inv_l", r.r1.unwrap(), 1.0 - 2.0 * ratio + ratio * x);
        check("r2 inv_l", r.r2.unwrap(), eta * s1p / (2.0 * tau * l - tau * tau));
        check("beta_min inv_l", r.beta_min, 1.0 / (x * (2.0 - x)));
        let r = sgd_rates(l, tau, s1p, 0.0, SgdStep::Constant(eta), AlphaChoice::TwoOverLPlusTau).unwrap();
        let s = l + tau;
        check("r1 2/(L+τ)", r.r1.unwrap(), 1.0 - eta * 4.0 * tau * l / (s * s));
        check("r2 2/(L+τ)", r.r2.unwrap(), eta * s1p / (tau * l));
        let bmin = s * s / (4.0 * tau * l);
        check("beta_min 2/(L+τ)", r.beta_min, bmin);

        let sb = bmin * (1.0 + rng.random_range(0.01..2.0));
        let r = sgd_rates(
            l,
            tau,
            s1p,
            0.0,
            SgdStep::Decreasing { beta: sb, gamma: 1.0 },
            AlphaChoice::TwoOverLPlusTau,
        )
        .unwrap();
        check(
            "r3 2/(L+τ)",
            r.r3.unwrap(),
            sb * sb * s1p / (sb * tau * l - s * s / 4.0),
        );
        let ib = (1.0 / (x * (2.0 - x))) * (1.0 + rng.random_range(0.01..2.0));
        let r = sgd_rates(
            l,
            tau,
            s1p,
            0.0,
            SgdStep::Decreasing { beta: ib, gamma: 1.0 },
            AlphaChoice::InvL,
        )
        .unwrap();
        check(
            "r3 inv_l",
            r.r3.unwrap(),
            ib * ib * s1p / (l * l * (ib * x * (2.0 - x) - 1.0)),
        );

        let b = bottou_rates(l, tau, eta, s1p).unwrap();
        check("bottou r1", b.r1, 1.0 - ratio);
        check("bottou r2", b.r2, 0.5 * eta * s1p / tau);

        let sl2 = 2.0 * (lt * lt + q * q) / (g * g);
        let gam = beta * (1.0 + sl2) * (1.0 + rng.random_range(0.0..1.0));
        let sub = subproblem_rate_constants(&c, beta, gam, w_norm, g_norm).unwrap();
        let den = beta * a - 1.0;
        check("sigma_lam2", sub.sigma_lam2, sl2);
        check("d_w", sub.d_w, f64::max(gam * w_norm * w_norm, beta * beta * s1p / den));
        let dv = f64::max(gam * g_norm * g_norm, 2.0 * (beta * lt * g_norm).powi(2) / den) / (g * g);
        check("d_v", sub.d_v, dv);

        let rho_f = sub.rho(gam);
        let sig_f = sub.sigma(gam);
        let composed = composed_mse_bound(&c, &rho_f, &sig_f, t, t).unwrap();
        let (rt, sk) = (sub.d_w / (gam + t), sub.d_v / (gam + t));
        let direct = floor + 6.0 * c1 * c1 * rt + (8.0 * lp * lp + 2.0 * m2) * sk + 8.0 * nu2 * nu2 * rt * sk;
        check("composed", composed.total, direct);
    }
    eprintln!("max relative gap {worst:.3e}");
}
