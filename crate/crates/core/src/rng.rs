//! Deterministic random streams.
//!
//! Every random decision in tinymr comes from a ChaCha8 stream whose seed is
//! derived by mixing a root seed with the identifiers of the thing being
//! randomized. Because the derivation is a pure function of its inputs, a
//! rerun after a job-level restart makes exactly the same choices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer. Bijective on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one seed.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(root), |acc, &p| mix64(acc ^ p))
}

/// A stream keyed by `root` and `parts`.
pub fn stream(root: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, parts))
}

/// The stream used by subsampling: keyed by (seed, sample id, repetition).
pub fn subsample_stream(seed: u64, sample_id: u64, repetition: u32) -> ChaCha8Rng {
    stream(seed, &[sample_id, u64::from(repetition)])
}

// Domain tags keep unrelated streams with equal ids apart.
pub(crate) const TAG_SIZES: u64 = 0x5349_5a45;
pub(crate) const TAG_RECORDS: u64 = 0x5245_4344;
pub(crate) const TAG_PROFILE: u64 = 0x5052_4f46;
pub(crate) const TAG_PLAN: u64 = 0x504c_414e;
pub(crate) const TAG_PROBE: u64 = 0x5052_4f42;
pub(crate) const TAG_NET: u64 = 0x4e45_5457;
