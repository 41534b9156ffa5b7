//! Deterministic random streams.
//!
//! Every source of randomness in a run is derived from one master seed and a
//! stream name, so adding a new consumer (say, a metric that shuffles batch
//! order) never shifts the draws seen by training or service-time sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Well-known stream names.
pub mod streams {
    pub const TRAINING: &str = "training";
    pub const METRICS: &str = "metrics";
    pub const SERVICE_TIMES: &str = "service-times";
    pub const SAMPLING: &str = "sampling";
    pub const NOISE: &str = "noise";
    pub const TASK: &str = "task";
}

/// Master seed from which named sub-streams are split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    master: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Independent generator for the stream `name`.
    pub fn rng(&self, name: &str) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }

    /// Independent generator for the `index`-th member of stream `name`
    /// (one per seed replicate, per worker, ...).
    pub fn rng_indexed(&self, name: &str, index: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.master, index));
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }

    /// Child seed stream, e.g. one per sweep cell.
    pub fn child(&self, index: u64) -> SeedStream {
        SeedStream::new(mix(self.master, index.wrapping_add(0x5851_f42d_4c95_7f2d)))
    }
}

/// splitmix64 finalizer over `a ^ rotated(b)`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(32) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
