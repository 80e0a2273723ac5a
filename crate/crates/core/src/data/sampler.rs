//! Minibatch index draws as pure functions of a [`SampleKey`].

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::invalid;
use crate::rng::{splitmix64, SampleKey};
use crate::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// `b` indices drawn uniformly with replacement, independently per key.
    #[default]
    IidWithReplacement,
    /// The key's counter walks through seeded permutations, `⌈n/b⌉` batches
    /// per epoch; the last batch of an epoch may be shorter.
    EpochShuffle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinibatchSampler {
    pub n: usize,
    pub b: usize,
    pub mode: SamplingMode,
    pub seed: u64,
}

pub fn minibatch_stream(n: usize, b: usize, mode: SamplingMode, seed: u64) -> Result<MinibatchSampler> {
    if b == 0 || b > n {
        return Err(invalid(format!("batch size {b} must lie in 1..={n}")));
    }
    Ok(MinibatchSampler { n, b, mode, seed })
}

impl MinibatchSampler {
    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.b)
    }

    fn sub_key(&self, key: SampleKey) -> SampleKey {
        key.with_master(splitmix64(key.master_seed ^ splitmix64(self.seed)))
    }

    /// Indices of the minibatch realised by `key`.
    pub fn indices(&self, key: SampleKey) -> Vec<usize> {
        match self.mode {
            SamplingMode::IidWithReplacement => {
                let mut rng = self.sub_key(key).rng();
                (0..self.b).map(|_| rng.random_range(0..self.n)).collect()
            }
            SamplingMode::EpochShuffle => {
                let per_epoch = self.batches_per_epoch() as u64;
                let (epoch, slot) = (key.counter / per_epoch, (key.counter % per_epoch) as usize);
                let mut perm: Vec<usize> = (0..self.n).collect();
                let epoch_key = SampleKey { counter: epoch, ..key };
                perm.shuffle(&mut self.sub_key(epoch_key).rng());
                let start = slot * self.b;
                perm[start..(start + self.b).min(self.n)].to_vec()
            }
        }
    }
}
