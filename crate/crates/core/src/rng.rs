//! Seeded random streams.
//!
//! Every stochastic term in the simulator draws from a ChaCha stream keyed by
//! an explicit seed plus a small tuple of indices (channel, ADC, pass...), so
//! results never depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep independent uses of one seed from sharing a stream.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum Domain {
    Phantom = 1,
    AfeNoise = 2,
    CapBank = 3,
    Comparator = 4,
    Matrix = 5,
    Rip = 6,
    Sweep = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream(seed: u64, domain: Domain, keys: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain as u64)));
    let mut s = 0u64;
    for &k in keys {
        s = splitmix(s ^ k);
    }
    rng.set_stream(s);
    rng
}
