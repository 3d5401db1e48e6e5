//! Seeded, platform-independent weight initialization and parameter audit.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::neck::{CrParams, NonLocalParams, SfcBranchParams, SmslParams};
use crate::tensor::{Scalar, Tensor};

/// Draw every weight uniformly from `[-a, a)` with `a = sqrt(6 / fan_in)`;
/// layer-norm affines start at identity.
///
/// The stream is ChaCha8 keyed by `seed`; each 64-bit draw maps to `[0, 1)`
/// as `(u >> 11) * 2^-53`, so the same seed produces bit-identical weights on
/// every platform. Tensors are filled in the canonical parameter order.
pub fn init_params(
    levels: usize,
    channels: usize,
    r: usize,
    seed: u64,
    include_extra_convs: bool,
) -> Result<SmslParams<f64>> {
    if levels < 2 {
        return Err(Error::Config(format!("need at least 2 levels, got {levels}")));
    }
    let lc = levels * channels;
    if r == 0 || channels % r != 0 || lc % r != 0 {
        return Err(Error::Config(format!(
            "reduction ratio {r} must divide C={channels} and LC={lc}"
        )));
    }
    if channels % 2 != 0 {
        return Err(Error::Config(format!(
            "non-local embedding needs an even channel count, got {channels}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = move |shape: &[usize], fan_in: usize| -> Result<Tensor<f64>> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                bound * (2.0 * unit - 1.0)
            })
            .collect();
        Tensor::new(shape.to_vec(), data)
    };

    let cr = CrParams {
        w1: uniform(&[lc / r, lc], lc)?,
        w2: uniform(&[lc, lc / r], lc / r)?,
        r,
    };
    let mut branch = |_: usize| -> Result<SfcBranchParams<f64>> {
        Ok(SfcBranchParams {
            w: uniform(&[channels / r, channels], channels)?,
            ln_gamma: Tensor::filled(&[channels / r], 1.0)?,
            ln_beta: Tensor::zeros(&[channels / r])?,
            v: uniform(&[lc, channels / r], channels / r)?,
        })
    };
    let sfc_local = (0..levels).map(&mut branch).collect::<Result<Vec<_>>>()?;
    let sfc_global = branch(levels)?;
    let half = channels / 2;
    let nonlocal = NonLocalParams {
        theta: uniform(&[half, channels, 1, 1], channels)?,
        phi: uniform(&[half, channels, 1, 1], channels)?,
        g: uniform(&[half, channels, 1, 1], channels)?,
        w_z: uniform(&[channels, half, 1, 1], half)?,
    };
    let extra_level_convs = if include_extra_convs {
        Some((
            uniform(&[channels, channels, 3, 3], channels * 9)?,
            uniform(&[channels, channels, 3, 3], channels * 9)?,
        ))
    } else {
        None
    };

    let params = SmslParams {
        cr,
        sfc_local,
        sfc_global,
        nonlocal,
        extra_level_convs,
    };
    params.validate(levels, channels, r)?;
    Ok(params)
}

/// Itemized count of scalar learnables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub cr: usize,
    /// All local branches together.
    pub sfc_local: usize,
    pub sfc_global: usize,
    pub nonlocal: usize,
    pub extra: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.cr + self.sfc_local + self.sfc_global + self.nonlocal + self.extra
    }

    /// Size of one selective-combination branch.
    pub fn per_branch(&self) -> usize {
        self.sfc_global
    }
}

pub fn count_params<E: Scalar>(params: &SmslParams<E>) -> ParamCount {
    let branch = |b: &SfcBranchParams<E>| {
        b.w.numel() + b.ln_gamma.numel() + b.ln_beta.numel() + b.v.numel()
    };
    ParamCount {
        cr: params.cr.w1.numel() + params.cr.w2.numel(),
        sfc_local: params.sfc_local.iter().map(branch).sum(),
        sfc_global: branch(&params.sfc_global),
        nonlocal: params.nonlocal.theta.numel()
            + params.nonlocal.phi.numel()
            + params.nonlocal.g.numel()
            + params.nonlocal.w_z.numel(),
        extra: params
            .extra_level_convs
            .as_ref()
            .map(|(a, b)| a.numel() + b.numel())
            .unwrap_or(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical_and_seeds_differ() {
        let a = init_params(3, 8, 4, 7, true).unwrap();
        let b = init_params(3, 8, 4, 7, true).unwrap();
        let c = init_params(3, 8, 4, 8, true).unwrap();
        assert!(a.cr.w1.bit_eq(&b.cr.w1));
        assert!(a.nonlocal.w_z.bit_eq(&b.nonlocal.w_z));
        assert!(a
            .extra_level_convs
            .as_ref()
            .unwrap()
            .0
            .bit_eq(&b.extra_level_convs.as_ref().unwrap().0));
        assert!(!a.cr.w1.bit_eq(&c.cr.w1));
    }

    #[test]
    fn weights_stay_within_their_bound_and_center_near_zero() {
        let p = init_params(5, 16, 4, 3, false).unwrap();
        // cr.w1 has fan_in = LC = 80.
        let bound = (6.0f64 / 80.0).sqrt();
        let data = p.cr.w1.data();
        assert!(data.iter().all(|v| v.abs() <= bound));
        // Mean of n uniform(-a, a) draws concentrates within 3*sigma/sqrt(n),
        // sigma = a/sqrt(3).
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let sigma = bound / 3.0f64.sqrt();
        assert!(
            mean.abs() <= 3.0 * sigma / n.sqrt(),
            "mean {mean} outside 3-sigma band"
        );
    }

    #[test]
    fn layer_norm_affine_starts_at_identity() {
        let p = init_params(2, 4, 2, 0, false).unwrap();
        assert!(p.sfc_local[0].ln_gamma.data().iter().all(|&v| v == 1.0));
        assert!(p.sfc_local[0].ln_beta.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divisibility_violations_are_configuration_errors() {
        assert!(init_params(3, 8, 3, 0, false).is_err()); // r does not divide C
        assert!(init_params(3, 7, 1, 0, false).is_err()); // odd C
        assert!(init_params(1, 8, 4, 0, false).is_err()); // too few levels
    }

    #[test]
    fn audited_counts_match_shape_arithmetic() {
        let p = init_params(5, 256, 8, 0, false).unwrap();
        let count = count_params(&p);
        assert_eq!(count.cr, 2 * 1280 * 160);
        assert_eq!(count.cr, 409_600);
        let per_branch = 32 * 256 + 2 * 32 + 1280 * 32;
        assert_eq!(count.per_branch(), per_branch);
        assert_eq!(count.sfc_local, 5 * per_branch);
        assert_eq!(count.nonlocal, 3 * 128 * 256 + 256 * 128);
        assert_eq!(
            count.total(),
            409_600 + 6 * per_branch + 4 * 128 * 256
        );
    }
}
