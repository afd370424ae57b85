//! Seeded random streams. Every stochastic routine takes its generator
//! explicitly so runs replay bit-for-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;

pub type SimRng = ChaCha8Rng;

/// Generator for `seed`, optionally split into an independent sub-stream.
pub fn rng_for(seed: u64, stream: u64) -> SimRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn normal_vec<T: Real, R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<T> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z)
        })
        .collect()
}

pub fn uniform_in<T: Real, R: Rng + ?Sized>(rng: &mut R, lo: T, hi: T) -> T {
    let u: f64 = rng.random();
    lo + (hi - lo) * T::lit(u)
}
