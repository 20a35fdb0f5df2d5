//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every stochastic step in the pipeline draws from its own generator whose
//! seed is derived from the run seed plus a set of integer tags (stage, round,
//! layout index, attempt, ...). Results therefore do not depend on the order in
//! which concurrent tasks happen to run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags mixed into derived seeds so that stages never share a stream.
pub mod stage {
    pub const GTOS: u64 = 0x4754_4f53;
    pub const LLM: u64 = 0x4c4c_4d00;
    pub const GMM_FIT: u64 = 0x474d_4d46;
    pub const GMM_SAMPLE: u64 = 0x474d_4d53;
    pub const SYNTHESIS: u64 = 0x5359_4e54;
    pub const RENDER: u64 = 0x5245_4e44;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base`, producing a well-distributed 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }
}
