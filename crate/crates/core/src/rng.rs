//! Seeded random streams.
//!
//! Every random quantity in the pipeline comes from a ChaCha stream whose seed
//! is derived from a base seed plus a path of indices (purpose tag, realization
//! index, copy index, ...). Parallel and serial runs therefore draw identical
//! numbers.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

/// Stream tags keep unrelated consumers of one base seed apart.
pub mod stream {
    pub const CHANNEL: u64 = 1;
    pub const CORRUPTION: u64 = 2;
    pub const MO_INIT: u64 = 3;
    pub const NET_INIT: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const DROPOUT: u64 = 7;
    pub const TRIAL_CHANNEL: u64 = 8;
    pub const TRIAL_CORRUPTION: u64 = 9;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of indices into a new seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng_for(base: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, path))
}

/// Circularly-symmetric complex Gaussian with the given variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}
