//! Datasets, file formats and minibatch sampling.

mod delimited;
mod idx;
mod libsvm;
mod sampler;

pub use delimited::{load_csv, write_csv};
pub use idx::{load_idx, write_idx};
pub use libsvm::{load_libsvm, parse_libsvm};
pub use sampler::{minibatch_stream, MinibatchSampler, SamplingMode};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::invalid;
use crate::rng::SampleKey;
use crate::Result;

/// Rows of `features` are examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<i64>,
    /// Raw values were divided by this to obtain `features`.
    pub feature_scale: f64,
    /// `(rows, cols)` for image data.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<i64>) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            feature_scale: 1.0,
            image_shape: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() == 0 || self.d() == 0 {
            return Err(invalid(format!(
                "dataset must be non-empty, got {}×{}",
                self.n(),
                self.d()
            )));
        }
        if self.labels.len() != self.n() {
            return Err(invalid(format!("{} labels for {} rows", self.labels.len(), self.n())));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(invalid("dataset has non-finite features"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            feature_scale: self.feature_scale,
            image_shape: self.image_shape,
        }
    }

    pub fn head(&self, n: usize) -> Dataset {
        self.select(&(0..n.min(self.n())).collect::<Vec<_>>())
    }
}

/// Odd digits map to `+1`, even digits to `−1`.
pub fn binarize_odd_even(labels: &[i64]) -> Result<Vec<i64>> {
    labels
        .iter()
        .map(|&l| match l {
            0..=9 => Ok(if l % 2 == 1 { 1 } else { -1 }),
            _ => Err(invalid(format!("digit label {l} outside 0..9"))),
        })
        .collect()
}

const SPLIT_STREAM: u64 = 0x5711_7000;

/// Disjoint random training and validation subsets, determined by `seed`.
pub fn split_train_val(ds: &Dataset, n_tr: usize, n_val: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_tr == 0 || n_val == 0 {
        return Err(invalid("both splits must be non-empty"));
    }
    if n_tr + n_val > ds.n() {
        return Err(invalid(format!("cannot split {} rows into {n_tr} + {n_val}", ds.n())));
    }
    let mut idx: Vec<usize> = (0..ds.n()).collect();
    idx.shuffle(&mut SampleKey::new(seed, SPLIT_STREAM, 0).rng());
    Ok((ds.select(&idx[..n_tr]), ds.select(&idx[n_tr..n_tr + n_val])))
}
