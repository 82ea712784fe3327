//! Counter-based random streams.
//!
//! A run seed selects the ChaCha key; the replica index selects the stream,
//! so replica `r` of seed `s` draws the same numbers whichever worker
//! computes it and in whatever order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used by domain-specific helpers that are not field replicas.
pub const AUX_DOMAIN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for replica `replica_index` of the run keyed by `seed`.
pub fn replica_rng(seed: u64, replica_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replica_index);
    rng
}

/// Generator for auxiliary work (random walks, reference draws) under `seed`.
pub fn aux_rng(seed: u64, index: u64) -> ChaCha8Rng {
    replica_rng(seed ^ AUX_DOMAIN, index)
}
