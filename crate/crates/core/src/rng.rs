//! Seeding conventions.
//!
//! Every random draw comes from a ChaCha8 generator keyed by a 64-bit seed.
//! Independent consumers of one seed (graphs, treatment panels, noise) read
//! disjoint ChaCha streams, so changing how one of them is sampled never
//! perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids for the consumers of a replication seed.
pub mod stream {
    pub const GRAPH: u64 = 0;
    pub const GRAPH_ALT: u64 = 1;
    pub const TREATMENT: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const FOLDS: u64 = 4;
    pub const BASELINE_TREATMENT: u64 = 5;
    pub const BASELINE_NOISE: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const FIXED_EFFECTS: u64 = 8;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for replication `index` of a study keyed by `base`.
pub fn replication_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}
