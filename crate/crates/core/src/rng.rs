//! Seeding conventions. Every stochastic routine takes an explicit seed or rng;
//! per-atom work draws from stream `i` of a ChaCha8 generator keyed by the
//! base seed, so atom `i` sees the same numbers regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DetRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn atom_stream(seed: u64, index: usize) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}
