//! Seeded random sources.
//!
//! Every stochastic operation takes its random source explicitly. Parallel or
//! per-item work derives one independent stream per task with
//! [`task_seed`], so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random source used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Seed splitting rule: `master * 1_000_003 + index`, wrapping.
pub fn task_seed(master: u64, index: u64) -> u64 {
    master.wrapping_mul(1_000_003).wrapping_add(index)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn task_rng(master: u64, index: u64) -> Rng {
    seeded(task_seed(master, index))
}
