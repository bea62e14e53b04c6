//! Named, counter-addressed random streams.
//!
//! Every random draw in a run descends from a single seed. A stream is
//! identified by `(seed, name, index)` so that per-sample draws do not depend
//! on evaluation order, and consuming more draws from one stream (for example
//! augmentation) never shifts another (for example weight initialisation).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Well-known stream names.
pub mod streams {
    pub const DATA: &str = "data";
    pub const INIT: &str = "init";
    pub const AUGMENT: &str = "augment";
    pub const SHUFFLE: &str = "shuffle";
    pub const SPLIT: &str = "split";
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed material for stream `name` / counter `index` under the run seed.
pub fn stream_seed(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ name_hash(name)).wrapping_add(splitmix64(index)))
}

pub fn substream(seed: u64, name: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, name, index))
}
