//! Seed derivation.
//!
//! Every random stream in a run is derived from one top-level seed. A stage
//! name and an index are folded into the seed with FNV-1a and finalised with
//! the SplitMix64 mixer, so rerunning one stage in isolation reproduces the
//! exact stream it saw inside a full run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed for `stage` (and an index within that stage).
pub fn derive(seed: u64, stage: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in stage.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(splitmix64(seed ^ h).wrapping_add(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(seed: u64, stage: &str, index: u64) -> ChaCha8Rng {
    rng(derive(seed, stage, index))
}
