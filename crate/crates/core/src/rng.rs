//! Reproducible random streams keyed by a master seed and a path of ids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, ids...)`; unaffected by scheduling order.
pub fn stream(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    let key = ids
        .iter()
        .fold(splitmix64(seed), |acc, &id| splitmix64(acc ^ splitmix64(id)));
    ChaCha8Rng::seed_from_u64(key)
}
