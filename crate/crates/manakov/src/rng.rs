//! Seeded random streams. Every Monte-Carlo run derives its own stream from
//! `(seed, stream id)` so results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::C64;

pub type SimRng = ChaCha12Rng;

/// Independent stream `stream` of the master `seed`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit id for a tuple of labels, used to derive stream ids.
pub fn stream_id(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Standard real Gaussian.
pub fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Circular complex Gaussian with `E|z|^2 = var`.
pub fn cgauss<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    C64::new(s * gauss(rng), s * gauss(rng))
}

/// Block of i.i.d. circular Gaussian samples.
pub fn cgauss_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, var: f64) -> Vec<C64> {
    (0..n).map(|_| cgauss(rng, var)).collect()
}
