//! Stable seed derivation shared by sampling, splitting and training.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one well-mixed 64-bit value.
pub fn mix_words(words: &[u64]) -> u64 {
    words.iter().fold(GOLDEN, |acc, &w| mix64(acc.wrapping_add(GOLDEN) ^ mix64(w.wrapping_add(GOLDEN))))
}

/// Seed for one rollout, independent of the order rollouts are generated in.
pub fn derive_seed(global_seed: u64, step: u64, prompt_index: u64, rollout_index: u64) -> u64 {
    mix_words(&[global_seed, step, prompt_index, rollout_index])
}
