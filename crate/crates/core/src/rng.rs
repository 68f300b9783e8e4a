//! Named, reproducible random substreams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a; stable across toolchains, unlike `DefaultHasher`.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}
