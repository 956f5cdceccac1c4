//! Deterministic random streams.
//!
//! Every generator is `xoshiro256++` seeded through `splitmix64`
//! (`Xoshiro256PlusPlus::seed_from_u64`). Named sub-streams mix a stable
//! FNV-1a hash of the name into the seed so that, for example, the
//! initialization and SfM-noise streams of one run never overlap.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// splitmix64 finalizer, also used as a stateless integer hash.
pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for sub-stream `name` of the run seeded with `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(splitmix(seed ^ fnv1a(name)))
}
