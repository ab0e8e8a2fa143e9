//! Deterministic seed derivation.
//!
//! Every randomised routine in the crate takes an explicit `u64` seed and
//! builds a ChaCha8 stream from it. Independent sub-tasks (trials, epochs,
//! dataset splits) derive their own seeds with [`derive_seed`] so the result
//! of a batch of tasks does not depend on execution order. This is what makes
//! the rayon and sequential execution paths bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a master seed with a stream index into an independent sub-seed.
///
/// Uses the splitmix64 finaliser, which is bijective in its input, so
/// distinct `(master, stream)` pairs cannot collide for fixed `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds the deterministic RNG used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Convenience for "stream `stream` of master seed `master`".
pub fn rng_for_stream(master: u64, stream: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, stream))
}
