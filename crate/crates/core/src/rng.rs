//! Named random streams derived from a single master seed.
//!
//! Every noise source (signal Brownian motion, observation Brownian motion, Poisson
//! clock, marks, thinning uniforms, particle mutation, resampling, initial draws) gets
//! its own stream so that experiments can share some sources and vary others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const BM_SIGNAL: &str = "bm_signal";
pub const BM_OBS: &str = "bm_obs";
pub const POISSON_CLOCK: &str = "poisson_clock";
pub const MARKS: &str = "marks";
pub const THINNING: &str = "thinning";
pub const INITIAL: &str = "initial";
pub const MUTATION: &str = "mutation";
pub const RESAMPLE: &str = "resample";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives a child seed from `(master, label, index)`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(
        splitmix64(master ^ fnv1a(label)) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)),
    )
}

/// Opens the stream `label` of replicate `index` under `master`.
pub fn stream(master: u64, label: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, index))
}
