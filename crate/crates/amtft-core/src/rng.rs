//! Deterministic stream-splitting RNG.
//!
//! A single master seed derives independent named sub-streams via a
//! counter-based mix, so adding draws to one stream (say, agent
//! exploration) never perturbs another (environment transitions).

use rand_chacha::rand_core::SeedableRng;

pub type Rng = rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive a 64-bit sub-seed from (master, label, index).
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut state = master ^ fnv1a(label.as_bytes()).rotate_left(17) ^ index.wrapping_mul(0xa24baed4963ee407);
    // A couple of extra rounds scrambles low-entropy (master, index) pairs.
    splitmix64(&mut state);
    splitmix64(&mut state)
}

/// A named, indexed stream under a master seed.
pub fn stream(master: u64, label: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(master, label, index))
}

/// Expand one 64-bit seed into a full ChaCha8 stream.
pub fn rng_from_seed(seed: u64) -> Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    Rng::from_seed(key)
}
