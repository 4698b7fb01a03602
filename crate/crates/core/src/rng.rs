//! Deterministic random streams.
//!
//! Every stochastic routine takes an explicit `&mut R: Rng`. Parallel work
//! derives an independent ChaCha stream from `(seed, indices...)` so results
//! do not depend on worker count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Root stream for a seed.
pub fn stream(seed: u64) -> StreamRng {
    substream(seed, &[])
}

/// Independent stream keyed by `seed` and an index path such as
/// `[grid_index, replicate_index]`.
pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    let mut state = splitmix64(seed);
    for (depth, &ix) in path.iter().enumerate() {
        state = splitmix64(state ^ splitmix64(ix.wrapping_add((depth as u64 + 1) << 56)));
    }
    let mut key = [0u8; 32];
    let mut s = state;
    for chunk in key.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
