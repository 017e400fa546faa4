//! Named, reproducible random streams derived from a single seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// FNV-1a; std's hasher is not guaranteed stable across releases.
fn stable_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// An independent stream for `name` under `seed`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stable_hash(name));
    rng
}
