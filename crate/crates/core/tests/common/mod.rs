//! Shared helpers for the integration suites: seeded data generation and
//! conversions into the oracle crate's nested-Vec layout.

#![allow(dead_code)]

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smsl_core::neck::{LevelSet, SmslParams};
use smsl_core::Tensor;

pub fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform values in `[-1, 1)`.
pub fn seeded_tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| 2.0 * unit_f64(&mut rng) - 1.0).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A level set rooted at `l_min = 3` with the given base size.
pub fn seeded_levels(seed: u64, levels: usize, channels: usize, base: usize) -> LevelSet<f64> {
    let features = (0..levels)
        .map(|i| seeded_tensor(seed.wrapping_add(i as u64), &[channels, base >> i, base >> i]))
        .collect();
    LevelSet::new(3, features).unwrap()
}

pub fn to_nested(t: &Tensor<f64>) -> Vec<Vec<Vec<f64>>> {
    let &[c, h, w] = t.shape() else { panic!("expected 3 dims") };
    (0..c)
        .map(|ci| {
            (0..h)
                .map(|y| (0..w).map(|x| t.data()[(ci * h + y) * w + x]).collect())
                .collect()
        })
        .collect()
}

pub fn to_matrix(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let &[r, c] = t.shape() else { panic!("expected 2 dims") };
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect()
}

pub fn to_conv_weight(t: &Tensor<f64>) -> Vec<Vec<Vec<Vec<f64>>>> {
    let &[co, ci, kh, kw] = t.shape() else { panic!("expected 4 dims") };
    (0..co)
        .map(|o| {
            (0..ci)
                .map(|i| {
                    (0..kh)
                        .map(|y| {
                            (0..kw)
                                .map(|x| t.data()[(((o * ci) + i) * kh + y) * kw + x])
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Flatten a `1x1` conv weight `[out, in, 1, 1]` into an `[out][in]` matrix.
pub fn to_projection(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let &[o, i, 1, 1] = t.shape() else { panic!("expected 1x1 conv weight") };
    (0..o)
        .map(|oc| t.data()[oc * i..(oc + 1) * i].to_vec())
        .collect()
}

pub fn nested_flat(nested: &[Vec<Vec<f64>>]) -> Vec<f64> {
    nested
        .iter()
        .flat_map(|p| p.iter().flat_map(|r| r.iter().copied()))
        .collect()
}

pub fn matrix_flat(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flat_map(|r| r.iter().copied()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn levels_to_oracle(levels: &LevelSet<f64>) -> smsl_oracle::Levels {
    smsl_oracle::Levels {
        l_min: levels.l_min(),
        features: levels.features().iter().map(to_nested).collect(),
    }
}

pub fn params_to_oracle(params: &SmslParams<f64>) -> smsl_oracle::Params {
    smsl_oracle::Params {
        w1: to_matrix(&params.cr.w1),
        w2: to_matrix(&params.cr.w2),
        local_branches: params
            .sfc_local
            .iter()
            .map(|b| smsl_oracle::Branch {
                w: to_matrix(&b.w),
                ln_gamma: b.ln_gamma.data().to_vec(),
                ln_beta: b.ln_beta.data().to_vec(),
                v: to_matrix(&b.v),
            })
            .collect(),
        global_branch: smsl_oracle::Branch {
            w: to_matrix(&params.sfc_global.w),
            ln_gamma: params.sfc_global.ln_gamma.data().to_vec(),
            ln_beta: params.sfc_global.ln_beta.data().to_vec(),
            v: to_matrix(&params.sfc_global.v),
        },
        theta: to_projection(&params.nonlocal.theta),
        phi: to_projection(&params.nonlocal.phi),
        g_proj: to_projection(&params.nonlocal.g),
        w_z: to_projection(&params.nonlocal.w_z),
    }
}
