//! Seed derivation for independent, order-free random streams.
//!
//! Every consumer (grid candidate, ensemble member, dropout pass, repetition)
//! owns a ChaCha stream whose seed is a pure function of a master seed and a
//! list of integer coordinates. Serial and parallel schedules therefore draw
//! identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `coords` into `master` one coordinate at a time.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c.wrapping_add(GOLDEN))))
}

pub fn stream(master: u64, coords: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, coords))
}

/// Stable 64-bit key for a string coordinate (FNV-1a).
pub fn str_key(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}
