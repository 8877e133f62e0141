//! Seeded random streams.
//!
//! Every randomized step draws from its own ChaCha stream keyed by the user
//! seed and a fixed purpose tag, so adding randomness to one stage never
//! shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Values are part of the reproducibility contract; never renumber.
pub mod purpose {
    pub const KMEANS_INIT: u64 = 1;
    pub const TSNE_INIT: u64 = 2;
    pub const VORONOI_JITTER: u64 = 3;
    pub const LV_FILL_ORDER: u64 = 4;
    pub const REENCODE: u64 = 5;
    pub const ABX_SAMPLING: u64 = 6;
    pub const SYNTHETIC_CORPUS: u64 = 7;
    pub const SYNTHETIC_AUDIO: u64 = 8;
}

pub fn stream(seed: u64, purpose: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}
