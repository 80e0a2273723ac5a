//! Counter-based randomness.
//!
//! Every random draw is a pure function of `(master_seed, stream_id,
//! counter)`. The pair `(master_seed, stream_id)` keys a ChaCha8 generator and
//! the counter selects one of its independent 2^64 streams, so identical keys
//! always reproduce identical draws and distinct keys give independent ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DOMAIN_TAG: [u8; 16] = *b"sid-sample-key/1";

/// Identifies one realisation of the random variable ζ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleKey {
    pub master_seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

impl SampleKey {
    pub fn new(master_seed: u64, stream_id: u64, counter: u64) -> Self {
        Self {
            master_seed,
            stream_id,
            counter,
        }
    }

    /// A fresh generator positioned at the start of this key's stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.stream_id.to_le_bytes());
        seed[16..].copy_from_slice(&DOMAIN_TAG);
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.counter);
        rng
    }

    /// Same key with a different master seed; used to derive independent
    /// sub-draws (e.g. a sampler with its own seed).
    pub fn with_master(self, master_seed: u64) -> Self {
        Self { master_seed, ..self }
    }
}

/// Hands out consecutive keys of one stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyStream {
    master_seed: u64,
    stream_id: u64,
    next_counter: u64,
}

impl KeyStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self::starting_at(master_seed, stream_id, 0)
    }

    pub fn starting_at(master_seed: u64, stream_id: u64, counter: u64) -> Self {
        Self {
            master_seed,
            stream_id,
            next_counter: counter,
        }
    }

    pub fn next_key(&mut self) -> SampleKey {
        let key = SampleKey::new(self.master_seed, self.stream_id, self.next_counter);
        self.next_counter += 1;
        key
    }

    pub fn next_counter(&self) -> u64 {
        self.next_counter
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derives the seed of replicate `index` from a master seed.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}
