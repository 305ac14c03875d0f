//! Seeded random streams.
//!
//! Every sampler takes an explicit seed. Parallel work derives independent
//! child seeds from `(seed, stream)` so results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::{c, CMatrix};

pub type SimRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// splitmix64 finalizer applied to the pair `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Entries iid `CN(0, 1)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = CMatrix::zeros(rows, cols);
    // fill column by column so the draw order matches the storage order
    for j in 0..cols {
        for i in 0..rows {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            m[(i, j)] = c(s * re, s * im);
        }
    }
    m
}
