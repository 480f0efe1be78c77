//! Counter-based random streams.
//!
//! Every replica draws from its own ChaCha stream selected by
//! `(seed, study, replica)`, so results do not depend on scheduling or on
//! how many workers run the replicas.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// Named stream identifiers so unrelated studies never share streams.
pub mod streams {
    pub const HAWKES: u64 = 0x4841_574b;
    pub const SDE: u64 = 0x5344_4500;
    pub const EXIT: u64 = 0x4558_4954;
    pub const OCCUPATION: u64 = 0x4f43_4355;
    pub const WEAK: u64 = 0x5745_414b;
    pub const OPTIM: u64 = 0x4f50_5449;
    pub const LIMIT: u64 = 0x4c49_4d49;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for replica `replica` of study `study` under top-level `seed`.
pub fn stream(seed: u64, study: u64, replica: u64) -> StreamRng {
    let mut key = [0u8; 32];
    let words = [splitmix(seed), splitmix(seed ^ study.rotate_left(17)), splitmix(study), 0x6f73_6368];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(replica);
    rng
}
