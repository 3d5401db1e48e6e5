//! Library behind the `smsl` binary: input synthesis, level-set directory
//! IO, adapters into the naive reference, and the property-check suite the
//! `selftest` subcommand and the acceptance tests share.

pub mod adapt;
pub mod checks;
pub mod commands;
pub mod levels_io;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smsl_core::neck::LevelSet;
use smsl_core::{Result, Tensor};

/// Common knobs shared by the synthetic-input commands.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub levels: usize,
    pub channels: usize,
    /// Base spatial size at the lowest level (`l_min = 3`).
    pub base: usize,
    pub r: usize,
    pub seed: u64,
}

/// Uniform values in `[-1, 1)` from a ChaCha8 stream keyed by `seed`; the
/// mapping is `(u >> 11) * 2^-53`, identical on every platform.
pub fn gen_tensor(seed: u64, shape: &[usize]) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| 2.0 * ((rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)) - 1.0)
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Seeded input pyramid rooted at level 3.
pub fn gen_levels(cfg: &RunConfig) -> Result<LevelSet<f64>> {
    let features = (0..cfg.levels)
        .map(|i| {
            gen_tensor(
                cfg.seed.wrapping_add(i as u64),
                &[cfg.channels, cfg.base >> i, cfg.base >> i],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    LevelSet::new(3, features)
}
