//! Counter-based random streams.
//!
//! Every draw made by the sampler is addressed by `(seed, sample, step)`, so
//! the values a sample sees do not depend on how samples are scheduled
//! across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Word offset between consecutive step substreams (2^40 32-bit words).
const STEP_STRIDE_BITS: u32 = 40;

/// Step index reserved for the prior draw of a sample.
pub const PRIOR_STEP: u64 = 0;

/// Derives the stream for one `(sample, step)` cell of a seeded run.
pub fn stream(seed: u64, sample: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    rng.set_word_pos(u128::from(step) << STEP_STRIDE_BITS);
    rng
}

/// Fills `out` with independent standard normal draws.
pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    fill_normal(rng, &mut v);
    v
}
