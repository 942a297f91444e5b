//! Platform-stable keyed hashing and seeded generators.
//!
//! Everything that must be reproducible from a `(seed, key)` pair goes through
//! here, so results do not depend on `std`'s randomized hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of `(seed, key)`: FNV-1a over the key bytes, then mixed with the seed.
pub fn keyed_hash(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h ^ mix64(seed))
}

/// Generator with an independent stream per `(seed, key)`.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(keyed_hash(seed, key))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Counter-based permutation of `0..n` derived from `(seed, counter)`.
pub fn permutation(n: usize, seed: u64, counter: u64) -> Vec<usize> {
    let base = mix64(seed ^ mix64(counter.wrapping_add(0x5851_f42d_4c95_7f2d)));
    let mut keyed: Vec<(u64, usize)> = (0..n).map(|i| (mix64(base ^ (i as u64)), i)).collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Orders `ids` by `keyed_hash(seed, id)`, ties by id.
pub fn hash_order<'a>(ids: impl IntoIterator<Item = &'a str>, seed: u64) -> Vec<&'a str> {
    let mut keyed: Vec<(u64, &str)> = ids.into_iter().map(|id| (keyed_hash(seed, id), id)).collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, id)| id).collect()
}
