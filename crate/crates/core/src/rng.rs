//! Seeded random streams.
//!
//! Every stochastic stage draws from a stream derived from one root seed and
//! a stage name, so changing one stage (say, the CDNN degree) never shifts the
//! random draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the sub-stream `name` of `root`. FNV-1a over the name, mixed
/// with the root through splitmix64.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(root ^ splitmix64(h))
}

/// Seed for the `index`-th member of a family of streams (restarts, clusters, reps).
pub fn derive_indexed(root: u64, name: &str, index: u64) -> u64 {
    splitmix64(derive_seed(root, name).wrapping_add(splitmix64(index.wrapping_add(1))))
}

pub fn stage_rng(root: u64, name: &str) -> StageRng {
    StageRng::seed_from_u64(derive_seed(root, name))
}

pub fn indexed_rng(root: u64, name: &str, index: u64) -> StageRng {
    StageRng::seed_from_u64(derive_indexed(root, name, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_indices_separate_streams() {
        assert_ne!(derive_seed(7, "core"), derive_seed(7, "cdnn"));
        assert_ne!(derive_seed(7, "core"), derive_seed(8, "core"));
        assert_ne!(derive_indexed(7, "restart", 0), derive_indexed(7, "restart", 1));
        assert_eq!(derive_indexed(7, "restart", 3), derive_indexed(7, "restart", 3));
    }
}
