//! Seeded, splittable random streams.
//!
//! Every random quantity in the crate comes from a ChaCha8 stream keyed by
//! `(master seed, purpose, index)`. Parallel loops key streams by the global
//! batch or replication index, never by worker, so results do not depend on
//! how many threads run them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for; keeps the purposes from sharing key material.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Allocation,
    ReferenceDraws,
    Replication,
    Calibration,
    Outcomes,
    Synthetic,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Allocation => 0x616c_6c6f,
            Purpose::ReferenceDraws => 0x7265_6664,
            Purpose::Replication => 0x7265_706c,
            Purpose::Calibration => 0x6361_6c69,
            Purpose::Outcomes => 0x6f75_7463,
            Purpose::Synthetic => 0x7379_6e74,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamSeeder {
    master: u64,
}

impl StreamSeeder {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, purpose: Purpose, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.master ^ splitmix64(purpose.tag())));
        rng.set_stream(index);
        rng
    }

    /// A seeder for a nested computation (e.g. one replication's own loop).
    pub fn child(&self, purpose: Purpose, index: u64) -> StreamSeeder {
        StreamSeeder::new(splitmix64(
            splitmix64(self.master ^ purpose.tag()).wrapping_add(index),
        ))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
