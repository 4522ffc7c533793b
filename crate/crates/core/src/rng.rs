//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] derived from a
//! single 64-bit master seed plus a stream label, so Monte Carlo trials can be
//! replayed individually and in any order.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Default master seed used by the command-line front end.
pub const DEFAULT_SEED: u64 = 0x5eed_2014;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a path of labels (trial index, purpose tag, ...) into a stream id.
pub fn stream_id(labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

/// Independent substream of `seed` identified by `labels`.
pub fn substream(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(labels));
    rng
}

/// Circularly-symmetric complex Gaussian sample with `E|z|^2 = variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}
