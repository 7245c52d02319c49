//! Counter-based derivation of independent random streams.
//!
//! Every edge of the tree owns a stream whose key is a fold of the run seed
//! over the edge's path, so the values sampled on an edge never depend on the
//! order in which edges are materialized. Replicas of an experiment get their
//! own seeds the same way, from `(seed, replica index)`.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const COUNTER_STEP: u64 = 0xD1B5_4A32_D192_ED03;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of the (virtual) edge above the root.
#[inline]
pub fn root_key(seed: u64) -> u64 {
    mix64(seed.wrapping_add(GOLDEN))
}

/// Key of the edge to child `index`, given the key of the edge above the parent.
#[inline]
pub fn child_key(parent_key: u64, index: u32) -> u64 {
    mix64(parent_key ^ mix64((u64::from(index) + 1).wrapping_mul(GOLDEN)))
}

/// Stream key of a tree edge, as a pure function of the run seed and the path.
pub fn edge_key(seed: u64, path: &[u32]) -> u64 {
    path.iter().fold(root_key(seed), |key, &i| child_key(key, i))
}

/// Seed of replica `index` of a run seeded with `seed`.
#[inline]
pub fn replica_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ 0x5851_F42D_4C95_7F2D).wrapping_add(index.wrapping_mul(GOLDEN)))
}

/// Generator for attempt `counter` of the stream `key`.
#[inline]
pub fn generator(key: u64, counter: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(mix64(key ^ counter.wrapping_mul(COUNTER_STEP)))
}

/// Auxiliary generator of a replica, separated from all edge streams by `tag`.
pub fn auxiliary(replica_seed: u64, tag: u64) -> SplitMix64 {
    generator(mix64(replica_seed ^ 0xA076_1D64_78BD_642F).wrapping_add(tag), 0)
}
