//! Seed derivation.
//!
//! Every random stream in a run is derived from the single run seed by
//! hashing it together with a purpose tag and a few integer coordinates
//! (agent id, round, modality). Streams are therefore independent of
//! scheduling: agent 7's shuffle in round 12 is the same no matter which
//! worker thread executes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Split = 2,
    Partition = 3,
    Init = 4,
    Shuffle = 5,
    Gossip = 6,
    Probe = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed`, a stream tag and a list of coordinates into a new seed.
pub fn derive(seed: u64, stream: Stream, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ (stream as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng(seed: u64, stream: Stream, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, coords))
}
