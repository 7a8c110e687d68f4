//! Reproducible random substreams.
//!
//! Every random consumer gets its own ChaCha8 stream addressed by
//! `(seed, stream id)`. ChaCha is a counter-based generator, so distinct
//! stream ids never overlap and a stream's output does not depend on how
//! many other streams were drawn before it. This is what makes parallel
//! trajectory generation order-independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Opens stream `stream` of the generator keyed by `seed`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a parent seed and an index (SplitMix64 finalizer).
///
/// Used to build seed hierarchies, e.g. master seed -> pump power -> detector arm.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x6A09_E667_F3BC_C909)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
