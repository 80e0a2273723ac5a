use nalgebra::DMatrix;

use super::design::{Batching, Design};
use super::{solve_fixed_point, RegMode};
use crate::data::{Dataset, SamplingMode};
use crate::error::invalid;
use crate::problem::{Constant, MinimizationForm, ProblemConstants, SamplingInfo, StochasticFixedPointProblem};
use crate::rng::SampleKey;
use crate::{RealVec, Result};

/// Regularised multinomial logistic regression. The weight matrix `W` (c×d)
/// is flattened class-major: `w[k·d + j] = W[k, j]`. Per-feature
/// regularisation shares `λⱼ` across classes.
#[derive(Clone, Debug, PartialEq)]
pub struct MultinomialLogistic {
    train: Design,
    train_y: Vec<usize>,
    val: Design,
    val_y: Vec<usize>,
    pub n_classes: usize,
    pub reg: RegMode,
    batching: Batching,
}

fn class_labels(labels: &[i64], c: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&y| {
            usize::try_from(y)
                .ok()
                .filter(|&k| k < c)
                .ok_or_else(|| invalid(format!("label {y} outside 0..{c}")))
        })
        .collect()
}

pub fn multinomial_problem(
    train: &Dataset,
    val: &Dataset,
    n_classes: usize,
    reg: RegMode,
    batch_size: usize,
) -> Result<MultinomialLogistic> {
    if n_classes < 2 {
        return Err(invalid("need at least two classes"));
    }
    if train.d() != val.d() {
        return Err(invalid("training and validation feature counts differ"));
    }
    Ok(MultinomialLogistic {
        train_y: class_labels(&train.labels, n_classes)?,
        val_y: class_labels(&val.labels, n_classes)?,
        train: Design::new(&train.features)?,
        val: Design::new(&val.features)?,
        batching: Batching::new(train.n(), batch_size)?,
        n_classes,
        reg,
    })
}

fn softmax_cols(z: &mut DMatrix<f64>) {
    for mut col in z.column_iter_mut() {
        let m = col.max();
        col.apply(|x| *x = (*x - m).exp());
        let s = col.sum();
        col /= s;
    }
}

impl MultinomialLogistic {
    pub fn with_sampling(mut self, mode: SamplingMode, seed: u64) -> Result<Self> {
        self.batching.set_mode(mode, seed)?;
        Ok(self)
    }

    fn d(&self) -> usize {
        self.train.d()
    }

    fn as_matrix(&self, w: &RealVec) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_classes, self.d(), w.as_slice())
    }

    fn flatten(m: &DMatrix<f64>) -> RealVec {
        RealVec::from_iterator(m.len(), m.transpose().iter().copied())
    }

    /// Regulariser weights laid out like `w`.
    fn reg_vec(&self, lambda: &RealVec) -> RealVec {
        let d = self.d();
        RealVec::from_fn(self.n_classes * d, |i, _| match self.reg {
            RegMode::Single => lambda[0],
            RegMode::PerFeature => lambda[i % d],
        })
    }

    fn reg_range(&self, lambda: &RealVec) -> (f64, f64) {
        (lambda.min(), lambda.max())
    }

    pub fn alpha(&self, lambda: &RealVec) -> f64 {
        let (tau, rmax) = self.reg_range(lambda);
        2.0 / (0.5 * self.train.gram_max + rmax + tau)
    }

    pub fn q(&self, lambda: &RealVec) -> f64 {
        let (tau, rmax) = self.reg_range(lambda);
        let l = 0.5 * self.train.gram_max + rmax;
        (l - tau) / (l + tau)
    }

    fn probs(&self, xt: &DMatrix<f64>, w: &RealVec) -> DMatrix<f64> {
        let mut z = self.as_matrix(w) * xt;
        softmax_cols(&mut z);
        z
    }

    /// `Σᵢ (pᵢ − e_{yᵢ}) xᵢᵀ`, flattened.
    fn data_grad(&self, xt: &DMatrix<f64>, y: &[usize], w: &RealVec) -> RealVec {
        let mut p = self.probs(xt, w);
        for (i, &k) in y.iter().enumerate() {
            p[(k, i)] -= 1.0;
        }
        Self::flatten(&(p * xt.transpose()))
    }

    /// `Σᵢ (pᵢ⊙sᵢ − pᵢ(pᵢᵀsᵢ)) xᵢᵀ` with `sᵢ = V xᵢ`.
    fn data_hvp(&self, xt: &DMatrix<f64>, w: &RealVec, v: &RealVec) -> RealVec {
        let p = self.probs(xt, w);
        let s = self.as_matrix(v) * xt;
        let mut h = p.component_mul(&s);
        for (i, mut col) in h.column_iter_mut().enumerate() {
            let ps = p.column(i).dot(&s.column(i));
            col -= p.column(i) * ps;
        }
        Self::flatten(&(h * xt.transpose()))
    }

    fn cross_entropy(&self, xt: &DMatrix<f64>, y: &[usize], w: &RealVec) -> f64 {
        let z = self.as_matrix(w) * xt;
        z.column_iter()
            .zip(y)
            .map(|(col, &k)| {
                let m = col.max();
                m + col.iter().map(|x| (x - m).exp()).sum::<f64>().ln() - col[k]
            })
            .sum()
    }

    pub fn lower_grad(&self, w: &RealVec, lambda: &RealVec) -> RealVec {
        self.data_grad(&self.train.xt, &self.train_y, w) + self.reg_vec(lambda).component_mul(w)
    }

    pub fn lower_value(&self, w: &RealVec, lambda: &RealVec) -> f64 {
        self.cross_entropy(&self.train.xt, &self.train_y, w) + 0.5 * self.reg_vec(lambda).component_mul(w).dot(w)
    }

    pub fn mean_val_loss(&self, w: &RealVec) -> f64 {
        self.cross_entropy(&self.val.xt, &self.val_y, w) / self.val.n() as f64
    }

    /// Validation accuracy of the arg-max class (lowest index on ties).
    pub fn val_accuracy(&self, w: &RealVec) -> f64 {
        let z = self.as_matrix(w) * &self.val.xt;
        let hits = z
            .column_iter()
            .zip(&self.val_y)
            .filter(|(col, &k)| col.imax() == k)
            .count();
        hits as f64 / self.val.n() as f64
    }

    fn batch_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.train_y[i]).collect()
    }
}

impl StochasticFixedPointProblem for MultinomialLogistic {
    fn dim_w(&self) -> usize {
        self.n_classes * self.d()
    }

    fn dim_lambda(&self) -> usize {
        match self.reg {
            RegMode::Single => 1,
            RegMode::PerFeature => self.d(),
        }
    }

    fn phi_mean(&self, w: &RealVec, lambda: &RealVec) -> RealVec {
        w - self.lower_grad(w, lambda) * self.alpha(lambda)
    }

    fn phi_sample(&self, w: &RealVec, lambda: &RealVec, key: SampleKey) -> RealVec {
        let (xb, idx, scale) = self.batching.draw(&self.train, key);
        let g = self.data_grad(&xb, &self.batch_labels(&idx), w) * scale + self.reg_vec(lambda).component_mul(w);
        w - g * self.alpha(lambda)
    }

    fn jvp1_t_mean(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> RealVec {
        v - self.lower_hvp(w, lambda, v) * self.alpha(lambda)
    }

    fn jvp1_t_sample(&self, w: &RealVec, lambda: &RealVec, key: SampleKey, v: &RealVec) -> RealVec {
        let (xb, _, scale) = self.batching.draw(&self.train, key);
        let h = self.data_hvp(&xb, w, v) * scale + self.reg_vec(lambda).component_mul(v);
        v - h * self.alpha(lambda)
    }

    fn jvp2_t_mean(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> RealVec {
        let alpha = self.alpha(lambda);
        let wv = w.component_mul(v);
        match self.reg {
            RegMode::Single => RealVec::from_element(1, -alpha * wv.sum()),
            RegMode::PerFeature => {
                let d = self.d();
                RealVec::from_fn(d, |j, _| {
                    -alpha * (0..self.n_classes).map(|k| wv[k * d + j]).sum::<f64>()
                })
            }
        }
    }

    fn jvp2_t_sample(&self, w: &RealVec, lambda: &RealVec, _key: SampleKey, v: &RealVec) -> RealVec {
        self.jvp2_t_mean(w, lambda, v)
    }

    fn upper_value(&self, w: &RealVec, _lambda: &RealVec) -> f64 {
        self.cross_entropy(&self.val.xt, &self.val_y, w)
    }

    fn upper_grad1(&self, w: &RealVec, _lambda: &RealVec) -> RealVec {
        self.data_grad(&self.val.xt, &self.val_y, w)
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
        Some(self.q(lambda))
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
            return Err(invalid("regularisation parameters must be positive"));
        }
        Ok(())
    }

    /// `ν₁` uses a crude bound on the third derivative of log-sum-exp and is
    /// flagged estimated.
    fn sigma2_lower(&self, _lambda: &RealVec) -> Option<f64> {
        Some(0.0)
    }

    fn constants(&self, lambda: &RealVec) -> Option<ProblemConstants> {
        self.validate_lambda(lambda).ok()?;
        let alpha = self.alpha(lambda);
        let q = self.q(lambda);
        let (tau, rmax) = self.reg_range(lambda);
        let w = solve_fixed_point(self, lambda, None, 1e-10, 1_000_000).ok()?;
        let (n, b) = (self.train.n() as f64, self.batching.sampler.b as f64);
        let h_max = rmax + 0.5 * n * self.train.max_sq_norm();
        let l_phi = match self.reg {
            RegMode::Single => alpha * w.norm(),
            RegMode::PerFeature => {
                let m = self.as_matrix(&w);
                alpha * m.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
            }
        };
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut c = ProblemConstants {
            q: Constant::analytic(q),
            l_e: Constant::analytic(sqrt2 * self.val.sum_norm_pow(1)),
            nu1: Constant::estimated(alpha * self.train.sum_norm_pow(3)),
            nu2: Constant::analytic(alpha),
            mu1: Constant::analytic(0.5 * self.val.gram_max),
            mu2: Constant::analytic(0.0),
            l_phi: Constant::analytic(l_phi),
            l_phi_tilde: Constant::analytic((1.0 - alpha * tau).max(alpha * h_max - 1.0)),
            m2: Constant::analytic(0.0),
            sigma1_lower: Constant::analytic(2.0 * alpha * alpha * n * n / b * self.train.mean_sq_norm()),
            sigma2_lower: Constant::analytic(0.0),
            sigma_lam1: Constant::analytic(4.0 * alpha * alpha * n * n / b * self.train.mean_sq_norm()),
            sigma_lam2: Constant::analytic(0.0),
        };
        c.sigma_lam2 = Constant::analytic(c.derived_sigma_lam2());
        Some(c)
    }
}

impl MinimizationForm for MultinomialLogistic {
    fn step_size(&self, lambda: &RealVec) -> f64 {
        self.alpha(lambda)
    }

    fn lower_hvp(&self, w: &RealVec, lambda: &RealVec, v: &RealVec) -> RealVec {
        self.data_hvp(&self.train.xt, w, v) + self.reg_vec(lambda).component_mul(v)
    }
}
