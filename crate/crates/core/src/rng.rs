//! Seeded, platform-independent randomness.
//!
//! Every random draw in the engine comes from ChaCha8 (`rand_chacha`) seeded
//! with `seed_from_u64`. Bounded integers are drawn as `u64` so the stream is
//! identical on 32- and 64-bit targets. Shuffles are Fisher-Yates, walking
//! from the last element down.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type EngineRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> EngineRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for the `index`-th image of a run.
pub fn image_seed(run_seed: u64, index: usize) -> u64 {
    run_seed ^ index as u64
}

pub fn shuffle<T>(rng: &mut EngineRng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        items.swap(i, j);
    }
}

/// Uniformly random permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut seeded(seed), &mut order);
    order
}
