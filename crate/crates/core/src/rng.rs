//! Seeded random streams.
//!
//! Every random consumer draws from its own ChaCha8 stream: the 64-bit run
//! seed is expanded into the 256-bit ChaCha key (`SeedableRng::seed_from_u64`)
//! and the consumer picks a distinct 64-bit stream id. ChaCha is a
//! counter-based generator, so two streams under the same key never overlap
//! and results do not depend on the order in which consumers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used by the library. Ids at or above [`stream::USER`] are free
/// for callers.
pub mod stream {
    pub const MOONS_NOISE: u64 = 1;
    pub const CLUSTER_CENTERS: u64 = 2;
    pub const CLUSTER_NOISE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const NET_INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const STUDENT_INIT: u64 = 7;
    pub const PROBE_TRIPLES: u64 = 8;
    pub const HEAD_INIT: u64 = 9;
    pub const TEACHER_SHUFFLE: u64 = 10;
    pub const PROBE_SHUFFLE: u64 = 11;
    pub const TEACHER_HEAD_INIT: u64 = 12;
    /// Minibatch replication `r` uses stream `MINIBATCH_BASE + r`.
    pub const MINIBATCH_BASE: u64 = 1 << 32;
    pub const USER: u64 = 1 << 48;
}

/// Returns the generator for `(seed, stream_id)`.
pub fn stream_rng(seed: u64, stream_id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
