//! Seed derivation.
//!
//! Every random draw in the project comes from a ChaCha8 generator addressed
//! by `(master seed, stream)`. Parallel producers therefore get independent,
//! order-free generators and a run is reproducible from its master seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for one logical stream under a master seed.
pub fn stream_rng(master: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Stream id for item `index` in a named domain (dataset split, device, ...).
pub fn stream_id(domain: u16, index: u64) -> u64 {
    (u64::from(domain) << 48) ^ (index & 0x0000_ffff_ffff_ffff)
}

/// Generator for item `index` within `domain`.
pub fn item_rng(master: u64, domain: u16, index: u64) -> Rng {
    stream_rng(master, stream_id(domain, index))
}
