//! Stable hashing used for seed derivation and the deterministic mocks.
//!
//! `fnv1a64` hashes byte strings, `mix64` is the SplitMix64 output function
//! (golden-ratio increment followed by the two multiply/xor-shift rounds), and
//! `hash_words` folds a word sequence as `h = mix64(h ^ w)` starting from 0.
//! These rules are part of the on-disk reproducibility contract: changing
//! them changes every generated run.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Stream id of the whole-image (scene) caption for a sample.
pub const SCENE_CAPTION_STREAM: u64 = u64::MAX - 1;
/// Stream id of the cropped-object caption for a sample.
pub const OBJECT_CAPTION_STREAM: u64 = u64::MAX;
/// Stream id used by the random-teacher baseline.
pub const RANDOM_FILTER_STREAM: u64 = u64::MAX - 2;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0, |h, &w| mix64(h ^ w))
}

/// Top 53 bits mapped to `[0, 1)`.
pub fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Box–Muller standard normal from two hashed words.
pub fn standard_normal(a: u64, b: u64) -> f64 {
    let u1 = unit_f64(a);
    let u2 = unit_f64(b);
    libm::sqrt(-2.0 * libm::log(1.0 - u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Seed for one stream of one sample: `hash_words([run_seed, fnv1a64(id), stream])`.
/// Candidate `j` uses stream `j`.
pub fn derive_seed(run_seed: u64, sample_id: &str, stream: u64) -> u64 {
    hash_words(&[run_seed, fnv1a64(sample_id.as_bytes()), stream])
}
