//! Deterministic random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the
//! experiment seed plus a purpose tag and coordinates (round, client, epoch).
//! Streams never share state, so the order in which jobs run cannot change
//! what any of them draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags keep streams for different consumers disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Split = 1,
    Partition = 2,
    ModelInit = 3,
    Participants = 4,
    Malicious = 5,
    Shuffle = 6,
    Anchoring = 7,
    Synthetic = 8,
    Poison = 9,
    Ratings = 10,
    MfInit = 11,
    Subsample = 12,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: Purpose, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, coords: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, purpose, coords))
}
