//! Counter-based random streams.
//!
//! Sample `i` of an estimate seeded with `seed` draws from ChaCha8 keyed by
//! `seed` (expanded to a 256-bit key by `SeedableRng::seed_from_u64`) on
//! stream number `i`. A stream's output depends only on `(seed, i)`, never on
//! which worker produced it or in what order, so estimates are identical for
//! any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SampleRng = ChaCha8Rng;

/// Independent generator for sample `index` under `seed`.
pub fn sample_stream(seed: u64, index: u64) -> SampleRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generator for sequential (non-sample) consumers such as the optimizers.
pub fn sequential_stream(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}
