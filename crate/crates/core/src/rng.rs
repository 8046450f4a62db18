//! Deterministic random-number streams.
//!
//! Every stochastic quantity in a run draws from a ChaCha stream whose seed
//! is derived from (master seed, domain tag, index). Streams are therefore
//! independent of thread scheduling and iteration order, which is what makes
//! reports byte-identical across worker counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; full-period bijective mixer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn absorb(state: u64, word: u64) -> u64 {
    mix(state ^ word.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Collapse (master, domain, index) into a single well-mixed u64 seed.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    absorb(absorb(mix(master), domain), index)
}

/// Deterministic generator for the given (master, domain, index) triple.
pub fn stream(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    stream_from_seed(derive_seed(master, domain, index))
}

/// Expand one u64 into a full 256-bit ChaCha seed.
pub fn stream_from_seed(seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = mix(seed);
    for chunk in key.chunks_exact_mut(8) {
        state = mix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
