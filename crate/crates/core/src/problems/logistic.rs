use nalgebra::DMatrix;

use super::design::{log1pexp_neg, sigmoid, Batching, Design};
use super::{solve_fixed_point, RegMode};
use crate::data::{Dataset, SamplingMode};
use crate::error::invalid;
use crate::problem::{Constant, MinimizationForm, ProblemConstants, SamplingInfo, StochasticFixedPointProblem};
use crate::rng::SampleKey;
use crate::{RealVec, Result};

/// `sup |ψ‴| = 1/(6√3)`.
const PSI3_SUP: f64 = 0.096_225_044_864_937_63;

/// Regularised binary logistic regression.
///
/// Lower objective `Σᵢ ψ(yᵢxᵢᵀw) + R(w, λ)` with `ψ(u) = log(1 + e^{−u})`
/// summed over the training set, `Φ = w − α∇₁ℓ` with `α = 2/(L + τ)`; the
/// minibatch estimator rescales the data term by `n/b`. Upper objective is
/// the same loss summed over the validation set.
#[derive(Clone, Debug, PartialEq)]
pub struct RegLogistic {
    train: Design,
    train_y: Vec<f64>,
    val: Design,
    val_y: Vec<f64>,
    pub reg: RegMode,
    batching: Batching,
    majority: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticGeometry {
    pub l: f64,
    pub tau: f64,
    pub alpha: f64,
    pub q: f64,
}

fn pm_one(labels: &[i64]) -> Result<Vec<f64>> {
    labels
        .iter()
        .map(|&y| match y {
            1 => Ok(1.0),
            -1 => Ok(-1.0),
            _ => Err(invalid(format!("logistic labels must be ±1, got {y}"))),
        })
        .collect()
}

pub fn logistic_problem(train: &Dataset, val: &Dataset, reg: RegMode, batch_size: usize) -> Result<RegLogistic> {
    if train.d() != val.d() {
        return Err(invalid("training and validation feature counts differ"));
    }
    let train_y = pm_one(&train.labels)?;
    let val_y = pm_one(&val.labels)?;
    let pos = train_y.iter().filter(|&&y| y > 0.0).count();
    Ok(RegLogistic {
        train: Design::new(&train.features)?,
        val: Design::new(&val.features)?,
        batching: Batching::new(train.n(), batch_size)?,
        majority: if 2 * pos >= train_y.len() { 1.0 } else { -1.0 },
        train_y,
        val_y,
        reg,
    })
}

impl RegLogistic {
    pub fn with_sampling(mut self, mode: SamplingMode, seed: u64) -> Result<Self> {
        self.batching.set_mode(mode, seed)?;
        Ok(self)
    }

    pub fn n_train(&self) -> usize {
        self.train.n()
    }

    pub fn n_val(&self) -> usize {
        self.val.n()
    }

    pub fn batch_size(&self) -> usize {
        self.batching.sampler.b
    }

    fn reg_vec(&self, lambda: &RealVec) -> RealVec {
        match self.reg {
            RegMode::Single => RealVec::from_element(self.train.d(), lambda[0]),
            RegMode::PerFeature => lambda.clone(),
        }
    }

    pub fn geometry(&self, lambda: &RealVec) -> LogisticGeometry {
        let r = self.reg_vec(lambda);
        let tau = r.min();
        let l = 0.25 * self.train.gram_max + r.max();
        LogisticGeometry {
            l,
            tau,
            alpha: 2.0 / (l + tau),
            q: (l - tau) / (l + tau),
        }
    }

    /// `Σᵢ ψ′(yᵢxᵢᵀw) yᵢ xᵢ` over the columns of `xt`.
    fn data_grad(xt: &DMatrix<f64>, y: &[f64], w: &RealVec) -> RealVec {
        let u = xt.tr_mul(w);
        let coef = RealVec::from_iterator(u.len(), u.iter().zip(y).map(|(&u, &y)| -y * sigmoid(-y * u)));
        xt * coef
    }

    /// `Σᵢ ψ″(yᵢxᵢᵀw) (xᵢᵀv) xᵢ`.
    fn data_hvp(xt: &DMatrix<f64>, y: &[f64], w: &RealVec, v: &RealVec) -> RealVec {
        let u = xt.tr_mul(w);
        let xv = xt.tr_mul(v);
        let coef = RealVec::from_iterator(
            u.len(),
            u.iter().zip(y).zip(xv.iter()).map(|((&u, &y), &xv)| {
                let s = sigmoid(y * u);
                s * (1.0 - s) * xv
            }),
        );
        xt * coef
    }

    fn batch_labels(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.train_y[i]).collect()
    }

    /// Minimises the lower objective until `‖Φ(w) − w‖ = α‖∇ℓ‖ ≤ tol`,
    /// falling back to fixed-point iteration if Newton stalls.
    pub fn newton_solve(&self, lambda: &RealVec, tol: f64, max_iter: usize) -> Result<RealVec> {
        let alpha = self.geometry(lambda).alpha;
        let r = self.reg_vec(lambda);
        let xt = &self.train.xt;
        let mut w = RealVec::zeros(self.train.d());
        let mut f = self.lower_value(&w, lambda);
        for _ in 0..max_iter {
            let grad = self.lower_grad(&w, lambda);
            if alpha * grad.norm() <= tol {
                return Ok(w);
            }
            let u = xt.tr_mul(&w);
            let curv = RealVec::from_iterator(
                u.len(),
                u.iter().zip(&self.train_y).map(|(&u, &y)| {
                    let s = sigmoid(y * u);
                    s * (1.0 - s)
                }),
            );
            let mut scaled = xt.clone();
            for (mut col, c) in scaled.column_iter_mut().zip(curv.iter()) {
                col *= *c;
            }
            let mut h = &scaled * xt.transpose();
            for i in 0..h.nrows() {
                h[(i, i)] += r[i];
            }
            let Some(chol) = h.cholesky() else { break };
            let step = chol.solve(&grad);
            let slope = grad.dot(&step);
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-10 {
                let cand = &w - &step * t;
                let fc = self.lower_value(&cand, lambda);
                if fc <= f - 1e-4 * t * slope {
                    w = cand;
                    f = fc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        solve_fixed_point(self, lambda, Some(&w), tol, 10_000_000)
    }

    /// Gradient of the lower objective.
    pub fn lower_grad(&self, w: &RealVec, lambda: &RealVec) -> RealVec {
        Self::data_grad(&self.train.xt, &self.train_y, w) + self.reg_vec(lambda).component_mul(w)
    }

    pub fn lower_value(&self, w: &RealVec, lambda: &RealVec) -> f64 {
        let u = self.train.xt.tr_mul(w);
        let data: f64 = u.iter().zip(&self.train_y).map(|(&u, &y)| log1pexp_neg(y * u)).sum();
        data + 0.5 * self.reg_vec(lambda).component_mul(w).dot(w)
    }

    /// Mean validation loss.
    pub fn mean_val_loss(&self, w: &RealVec) -> f64 {
        self.upper_value(w, &RealVec::zeros(0)) / self.val.n() as f64
    }

    /// Validation accuracy of `sign(xᵀw)`; ties go to the training majority.
    pub fn val_accuracy(&self, w: &RealVec) -> f64 {
        let u = self.val.xt.tr_mul(w);
        let hits = u
            .iter()
            .zip(&self.val_y)
            .filter(|(&u, &y)| {
                let pred = if u > 0.0 {
                    1.0
                } else if u < 0.0 {
                    -1.0
                } else {
                    self.majority
                };
                pred == y
            })
            .count();
        hits as f64 / self.val.n() as f64
    }
}

/// `(L, τ, α, q)` at `λ`; `λ` must be positive.
pub fn logistic_constants(p: &RegLogistic, lambda: &RealVec) -> Result<LogisticGeometry> {
    p.validate_lambda(lambda)?;
    Ok(p.geometry(lambda))
}

impl StochasticFixedPointProblem for RegLogistic {
    fn dim_w(&self) -> usize {
        self.train.d()
    }

    fn dim_lambda(&self) -> usize {
        match self.reg {
            RegMode::Single => 1,
            RegMode::PerFeature => self.train.d(),
        }
    }

    fn phi_mean(&self, w: &RealVec, lambda: &RealVec) -> RealVec {
        let alpha = self.geometry(lambda).alpha;
        w - self.lower_grad(w, lambda) * alpha
    }

    fn phi_sample(&self, w: &RealVec, lambda: &RealVec, key: SampleKey) -> RealVec {
        let alpha = self.geometry(lambda).alpha;
        let (xb, idx, scale) = self.batching.draw(&self.train, key);
        let g = Self::data_grad(&xb, &self.batch_labels(&idx), w) * scale + self.reg_vec(lambda).component_mul(w);
        w - g * alpha
    }

    fn jvp1_t_mean(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> RealVec {
        let alpha = self.geometry(lambda).alpha;
        v - self.lower_hvp(w, lambda, v) * alpha
    }

    fn jvp1_t_sample(&self, w: &RealVec, lambda: &RealVec, key: SampleKey, v: &RealVec) -> RealVec {
        let alpha = self.geometry(lambda).alpha;
        let (xb, idx, scale) = self.batching.draw(&self.train, key);
        let h = Self::data_hvp(&xb, &self.batch_labels(&idx), w, v) * scale + self.reg_vec(lambda).component_mul(v);
        v - h * alpha
    }

    /// `α` is held fixed in λ; the dropped `dα/dλ ∇₁ℓ` term vanishes at the
    /// fixed point.
    fn jvp2_t_mean(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> RealVec {
        let alpha = self.geometry(lambda).alpha;
        match self.reg {
            RegMode::Single => RealVec::from_element(1, -alpha * w.dot(v)),
            RegMode::PerFeature => -w.component_mul(v) * alpha,
        }
    }

    fn jvp2_t_sample(&self, w: &RealVec, lambda: &RealVec, _key: SampleKey, v: &RealVec) -> RealVec {
        self.jvp2_t_mean(w, lambda, v)
    }

    fn upper_value(&self, w: &RealVec, _lambda: &RealVec) -> f64 {
        let u = self.val.xt.tr_mul(w);
        u.iter().zip(&self.val_y).map(|(&u, &y)| log1pexp_neg(y * u)).sum()
    }

    fn upper_grad1(&self, w: &RealVec, _lambda: &RealVec) -> RealVec {
        Self::data_grad(&self.val.xt, &self.val_y, w)
    }

    fn upper_grad2(&self, _w: &RealVec, _lambda: &RealVec) -> RealVec {
        RealVec::zeros(self.dim_lambda())
    }

    fn jvp1_mean(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> Option<RealVec> {
        Some(self.jvp1_t_mean(w, lambda, v))
    }

    fn minimization_form(&self) -> Option<&dyn MinimizationForm> {
        Some(self)
    }

    fn contraction_modulus(&self, lambda: &RealVec) -> Option<f64> {
        Some(self.geometry(lambda).q)
    }

    fn sampling(&self) -> SamplingInfo {
        SamplingInfo {
            n: self.train.n(),
            batch: self.batching.sampler.b,
        }
    }

    fn validate_lambda(&self, lambda: &RealVec) -> Result<()> {
        if lambda.len() != self.dim_lambda() {
            return Err(invalid(format!(
                "λ has dimension {}, expected {}",
                lambda.len(),
                self.dim_lambda()
            )));
        }
        if !lambda.iter().all(|&x| x.is_finite() && x > 0.0) {
            return Err(invalid("logistic regularisation parameters must be positive"));
        }
        Ok(())
    }

    /// Lower-level minimiser by damped Newton steps.
    fn fixed_point(&self, lambda: &RealVec) -> Option<RealVec> {
        self.validate_lambda(lambda).ok()?;
        self.newton_solve(lambda, 1e-12, 100).ok()
    }

    fn sigma2_lower(&self, _lambda: &RealVec) -> Option<f64> {
        Some(0.0)
    }

    fn constants(&self, lambda: &RealVec) -> Option<ProblemConstants> {
        self.validate_lambda(lambda).ok()?;
        let g = self.geometry(lambda);
        let w = self.fixed_point(lambda)?;
        let (n, b) = (self.train.n() as f64, self.batching.sampler.b as f64);
        let r = self.reg_vec(lambda);
        let h_max = r.max() + 0.25 * n * self.train.max_sq_norm();
        let l_phi = match self.reg {
            RegMode::Single => g.alpha * w.norm(),
            RegMode::PerFeature => g.alpha * w.amax(),
        };
        // per-example gradients at w(λ)
        let u = self.train.xt.tr_mul(&w);
        let mut mean_sq = 0.0;
        let mut mean_g = RealVec::zeros(self.train.d());
        for (i, x) in self.train.xt.column_iter().enumerate() {
            let y = self.train_y[i];
            let c = -y * sigmoid(-y * u[i]);
            mean_sq += c * c * self.train.col_norms[i].powi(2);
            mean_g += x * c;
        }
        mean_sq /= n;
        mean_g /= n;
        let var_at_fp = g.alpha * g.alpha * n * n / b * (mean_sq - mean_g.norm_squared()).max(0.0);
        let mut c = ProblemConstants {
            q: Constant::analytic(g.q),
            l_e: Constant::analytic(self.val.sum_norm_pow(1)),
            nu1: Constant::analytic(g.alpha * PSI3_SUP * self.train.sum_norm_pow(3)),
            nu2: Constant::analytic(g.alpha),
            mu1: Constant::analytic(0.25 * self.val.gram_max),
            mu2: Constant::analytic(0.0),
            l_phi: Constant::analytic(l_phi),
            l_phi_tilde: Constant::analytic((1.0 - g.alpha * g.tau).max(g.alpha * h_max - 1.0)),
            m2: Constant::analytic(0.0),
            sigma1_lower: Constant::analytic(g.alpha * g.alpha * n * n / b * self.train.mean_sq_norm()),
            sigma2_lower: Constant::analytic(0.0),
            sigma_lam1: Constant::analytic(2.0 * var_at_fp),
            sigma_lam2: Constant::analytic(0.0),
        };
        c.sigma_lam2 = Constant::analytic(c.derived_sigma_lam2());
        Some(c)
    }
}

impl MinimizationForm for RegLogistic {
    fn step_size(&self, lambda: &RealVec) -> f64 {
        self.geometry(lambda).alpha
    }

    fn lower_hvp(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> RealVec {
        Self::data_hvp(&self.train.xt, &self.train_y, w, v) + self.reg_vec(lambda).component_mul(v)
    }
}
