//! Named random streams derived from one global seed.
//!
//! Every randomized stage draws from its own stream keyed by a stage name
//! (and optionally a replicate index), so adding or reordering stages never
//! perturbs the draws of the others. The derivation is fixed here and does
//! not depend on platform hashers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for the stream `(seed, name)`.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    substream(seed, name, 0)
}

/// RNG for the stream `(seed, name, index)`; used for per-replicate or
/// per-epoch derivations.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ fnv1a(name.as_bytes()) ^ index.wrapping_mul(0xa076_1d64_78bd_642f);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
