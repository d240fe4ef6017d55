//! Deterministic seed derivation.
//!
//! Every random decision in a run is drawn from a ChaCha stream whose seed is
//! derived from the run seed and a path of integers (pass, item, turn, ...),
//! so results do not depend on scheduling or thread count.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes `base` with `path` into a new 64-bit seed.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(base);
    for p in path {
        h.write_u64(*p);
    }
    splitmix(h.finish())
}

/// Seed derived from arbitrary bytes (e.g. a prompt) plus a base seed.
pub fn derive_bytes(base: u64, bytes: &[u8], path: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(base);
    h.write(bytes);
    for p in path {
        h.write_u64(*p);
    }
    splitmix(h.finish())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
