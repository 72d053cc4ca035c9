use hefl_ckks::sampling::{derive_seed, rng_from_seed};
use rand_chacha::ChaCha20Rng;

/// Independent deterministic stream for `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha20Rng {
    rng_from_seed(derive_seed(seed, tags))
}

pub fn sub_seed(seed: u64, tags: &[u64]) -> u64 {
    derive_seed(seed, tags)
}

/// Domain tags, so unrelated consumers of one experiment seed never share a
/// stream.
pub mod tag {
    pub const INIT: u64 = 0x1417;
    pub const DATA: u64 = 0xda7a;
    pub const PARTITION: u64 = 0x9a27;
    pub const SHUFFLE: u64 = 0x5f1e;
    pub const KEYS: u64 = 0x6e75;
    pub const ENCRYPT: u64 = 0xe2c7;
    pub const ATTACK: u64 = 0xa77a;
}
