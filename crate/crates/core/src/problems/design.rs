//! Training/validation design matrices stored one example per column, plus
//! the minibatch sampler shared by the generalised linear problems.

use nalgebra::DMatrix;

use crate::data::{minibatch_stream, MinibatchSampler, SamplingMode};
use crate::error::invalid;
use crate::linalg::max_eig_gram;
use crate::rng::SampleKey;
use crate::Result;

const POWER_ITERS: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Design {
    /// d×n.
    pub xt: DMatrix<f64>,
    /// Largest eigenvalue of `XᵀX`.
    pub gram_max: f64,
    pub col_norms: Vec<f64>,
}

impl Design {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(invalid("design matrix must be non-empty"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("design matrix has non-finite entries"));
        }
        let xt = x.transpose();
        let gram_max = max_eig_gram(&xt, POWER_ITERS, 0);
        let col_norms = xt.column_iter().map(|c| c.norm()).collect();
        Ok(Self {
            xt,
            gram_max,
            col_norms,
        })
    }

    pub fn n(&self) -> usize {
        self.xt.ncols()
    }

    pub fn d(&self) -> usize {
        self.xt.nrows()
    }

    pub fn max_sq_norm(&self) -> f64 {
        self.col_norms.iter().fold(0.0f64, |m, x| m.max(x * x))
    }

    pub fn mean_sq_norm(&self) -> f64 {
        self.col_norms.iter().map(|x| x * x).sum::<f64>() / self.n() as f64
    }

    pub fn sum_norm_pow(&self, p: i32) -> f64 {
        self.col_norms.iter().map(|x| x.powi(p)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Batching {
    pub sampler: MinibatchSampler,
}

impl Batching {
    pub fn new(n: usize, b: usize) -> Result<Self> {
        Ok(Self {
            sampler: minibatch_stream(n, b, SamplingMode::default(), 0)?,
        })
    }

    pub fn set_mode(&mut self, mode: SamplingMode, seed: u64) -> Result<()> {
        self.sampler = minibatch_stream(self.sampler.n, self.sampler.b, mode, seed)?;
        Ok(())
    }

    /// Column block of the batch realised by `key`, its indices, and the
    /// sum-scaling factor `n / |batch|`.
    pub fn draw(&self, design: &Design, key: SampleKey) -> (DMatrix<f64>, Vec<usize>, f64) {
        let idx = self.sampler.indices(key);
        let scale = self.sampler.n as f64 / idx.len() as f64;
        (design.xt.select_columns(&idx), idx, scale)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ψ(u) = log(1 + e^{−u})`.
pub(crate) fn log1pexp_neg(u: f64) -> f64 {
    if u > 0.0 {
        (-u).exp().ln_1p()
    } else {
        -u + u.exp().ln_1p()
    }
}
