//! Behavioral properties of the neck: stage-by-stage oracle agreement,
//! degenerate parameter closed forms, determinism, and a small end-to-end
//! gradient check.

mod common;

use std::thread;

use common::*;
use smsl_core::autodiff::gradcheck::GradCheckSettings;
use smsl_core::neck::forward::{
    channel_rescale, fuse_and_scatter, gather, gradcheck_smsl, make_extra_levels, nonlocal_refine,
    selective_combine, smsl_forward, smsl_forward_traced,
};
use smsl_core::neck::init::init_params;
use smsl_core::neck::{LevelSet, SmslConfig, SmslParams};
use smsl_core::tensor::kernels;
use smsl_core::Tensor;
use smsl_oracle::neck as oracle_neck;

fn zeros_like(t: &Tensor<f64>) -> Tensor<f64> {
    Tensor::zeros(t.shape()).unwrap()
}

fn zero_branch_v(params: &mut SmslParams<f64>) {
    for b in &mut params.sfc_local {
        b.v = zeros_like(&b.v);
    }
    params.sfc_global.v = zeros_like(&params.sfc_global.v);
}

#[test]
fn extra_levels_have_stride_two_geometry() {
    let c5 = seeded_tensor(1, &[4, 32, 32]);
    let w6 = seeded_tensor(2, &[4, 4, 3, 3]);
    let w7 = seeded_tensor(3, &[4, 4, 3, 3]);
    let (c6, c7) = make_extra_levels(&c5, &w6, &w7).unwrap();
    assert_eq!(c6.shape(), &[4, 16, 16]);
    assert_eq!(c7.shape(), &[4, 8, 8]);

    let zero_w = Tensor::zeros(&[4, 4, 3, 3]).unwrap();
    let (z6, z7) = make_extra_levels(&c5, &zero_w, &zero_w).unwrap();
    assert!(z6.data().iter().all(|&v| v == 0.0));
    assert!(z7.data().iter().all(|&v| v == 0.0));

    let odd = seeded_tensor(4, &[4, 6, 6]);
    assert!(make_extra_levels(&odd, &w6, &w7).is_err());
}

#[test]
fn extra_levels_match_oracle_conv_chain() {
    let c5 = seeded_tensor(5, &[3, 8, 8]);
    let w6 = seeded_tensor(6, &[3, 3, 3, 3]);
    let w7 = seeded_tensor(7, &[3, 3, 3, 3]);
    let (c6, c7) = make_extra_levels(&c5, &w6, &w7).unwrap();
    let o6 = smsl_oracle::naive::conv2d(&to_nested(&c5), &to_conv_weight(&w6), 2, 1);
    let o7 = smsl_oracle::naive::conv2d(&o6, &to_conv_weight(&w7), 2, 1);
    assert!(max_abs_diff(c6.data(), &nested_flat(&o6)) <= 1e-12);
    assert!(max_abs_diff(c7.data(), &nested_flat(&o7)) <= 1e-12);
}

#[test]
fn gather_keeps_own_level_bit_identical() {
    let levels = seeded_levels(11, 3, 4, 16);
    let cfg = SmslConfig::with_r(2); // gather level (3+5)/2 = 4
    let gathered = gather(&levels, &cfg).unwrap();
    assert!(gathered[1].bit_eq(levels.feature(4).unwrap()));
    assert_eq!(gathered[0].shape(), &[4, 8, 8]);
    assert_eq!(gathered[2].shape(), &[4, 8, 8]);
}

#[test]
fn default_gather_level_for_five_levels_quarters_the_base() {
    // Five levels 3..7 gather at level 5: every map ends up base/4.
    let levels = seeded_levels(12, 5, 2, 16);
    let cfg = SmslConfig::with_r(2);
    let gathered = gather(&levels, &cfg).unwrap();
    for g in &gathered {
        assert_eq!(g.shape(), &[2, 4, 4]);
    }
}

#[test]
fn gather_preserves_constant_levels() {
    let features = (0..3)
        .map(|i| Tensor::filled(&[2, 16 >> i, 16 >> i], 3.75).unwrap())
        .collect();
    let levels = LevelSet::new(3, features).unwrap();
    let gathered = gather(&levels, &SmslConfig::with_r(2)).unwrap();
    for g in gathered {
        assert!(g.data().iter().all(|&v| v == 3.75));
    }
}

#[test]
fn zero_second_gate_layer_halves_features_exactly() {
    let params = {
        let mut p = init_params(3, 8, 4, 21, false).unwrap();
        p.cr.w2 = zeros_like(&p.cr.w2);
        p.cr
    };
    let gathered: Vec<Tensor<f64>> = (0..3).map(|i| seeded_tensor(22 + i, &[8, 8, 8])).collect();
    let q = channel_rescale(&gathered, &params).unwrap();
    for (qi, di) in q.iter().zip(&gathered) {
        assert!(qi.bit_eq(&kernels::scale(di, 0.5).unwrap()));
    }
}

#[test]
fn channel_rescale_matches_oracle_stage() {
    let params = init_params(3, 8, 4, 31, false).unwrap();
    let gathered: Vec<Tensor<f64>> = (0..3).map(|i| seeded_tensor(32 + i, &[8, 8, 8])).collect();
    let q = channel_rescale(&gathered, &params.cr).unwrap();
    let nested: Vec<_> = gathered.iter().map(to_nested).collect();
    let (oq, gate) = oracle_neck::channel_rescale_ref(
        &nested,
        &to_matrix(&params.cr.w1),
        &to_matrix(&params.cr.w2),
    )
    .unwrap();
    for (a, b) in q.iter().zip(&oq) {
        assert!(max_abs_diff(a.data(), &nested_flat(b)) <= 1e-12);
    }
    assert!(gate.iter().all(|&s| s > 0.0 && s < 1.0));
}

#[test]
fn zero_expansion_weight_makes_combine_an_elementwise_mean() {
    let mut params = init_params(3, 8, 4, 41, false).unwrap();
    zero_branch_v(&mut params);
    let q: Vec<Tensor<f64>> = (0..3).map(|i| seeded_tensor(42 + i, &[8, 4, 4])).collect();
    let fused = selective_combine(&q, &params.sfc_local[0], 1e-5).unwrap();
    let sum = q
        .iter()
        .skip(1)
        .fold(q[0].clone(), |acc, t| kernels::add(&acc, t).unwrap());
    let mean = kernels::scale(&sum, 1.0 / 3.0).unwrap();
    assert!(max_abs_diff(fused.data(), mean.data()) <= 1e-12);
}

#[test]
fn single_level_combine_returns_its_input_regardless_of_weights() {
    // One level: the softmax over levels is identically one. The branch
    // shapes must describe L=1, so build them directly.
    let q = vec![seeded_tensor(51, &[4, 4, 4])];
    let branch = smsl_core::neck::SfcBranchParams {
        w: seeded_tensor(52, &[2, 4]),
        ln_gamma: seeded_tensor(53, &[2]),
        ln_beta: seeded_tensor(54, &[2]),
        v: seeded_tensor(55, &[4, 2]),
    };
    let fused = selective_combine(&q, &branch, 1e-5).unwrap();
    assert!(max_abs_diff(fused.data(), q[0].data()) <= 1e-15);
}

#[test]
fn selective_combine_matches_oracle_stage() {
    let params = init_params(3, 8, 4, 61, false).unwrap();
    let q: Vec<Tensor<f64>> = (0..3).map(|i| seeded_tensor(62 + i, &[8, 8, 8])).collect();
    let nested: Vec<_> = q.iter().map(to_nested).collect();
    for branch in params.sfc_local.iter().chain([&params.sfc_global]) {
        let fused = selective_combine(&q, branch, 1e-5).unwrap();
        let (ofused, attention) = oracle_neck::selective_combine_ref(
            &nested,
            &smsl_oracle::Branch {
                w: to_matrix(&branch.w),
                ln_gamma: branch.ln_gamma.data().to_vec(),
                ln_beta: branch.ln_beta.data().to_vec(),
                v: to_matrix(&branch.v),
            },
            1e-5,
        )
        .unwrap();
        assert!(max_abs_diff(fused.data(), &nested_flat(&ofused)) <= 1e-12);
        for col in 0..8 {
            let sum: f64 = (0..3).map(|row| attention[row][col]).sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_output_projection_makes_nonlocal_identity() {
    let mut params = init_params(2, 8, 4, 71, false).unwrap();
    params.nonlocal.w_z = zeros_like(&params.nonlocal.w_z);
    let fg = seeded_tensor(72, &[8, 4, 4]);
    let refined = nonlocal_refine(&fg, &params.nonlocal).unwrap();
    assert!(refined.bit_eq(&fg));
}

#[test]
fn single_position_nonlocal_reduces_to_projection_chain() {
    let params = init_params(2, 4, 2, 81, false).unwrap();
    let fg = seeded_tensor(82, &[4, 1, 1]);
    let refined = nonlocal_refine(&fg, &params.nonlocal).unwrap();
    // With one position the attention weight is exactly 1, so the output is
    // fg + w_z (g fg), computable by two explicit projections.
    let gmat = to_projection(&params.nonlocal.g);
    let zmat = to_projection(&params.nonlocal.w_z);
    let y: Vec<f64> = gmat
        .iter()
        .map(|row| row.iter().zip(fg.data()).map(|(&w, &v)| w * v).sum())
        .collect();
    for (oc, row) in zmat.iter().enumerate() {
        let delta: f64 = row.iter().zip(&y).map(|(&w, &v)| w * v).sum();
        let expect = fg.data()[oc] + delta;
        assert!((refined.data()[oc] - expect).abs() <= 1e-12);
    }
}

#[test]
fn odd_channel_count_is_a_configuration_error() {
    let params = init_params(2, 4, 2, 91, false).unwrap();
    let fg = seeded_tensor(92, &[5, 2, 2]);
    assert!(nonlocal_refine(&fg, &params.nonlocal).is_err());
}

#[test]
fn nonlocal_matches_oracle_attention_loops() {
    let params = init_params(2, 8, 4, 101, false).unwrap();
    let fg = seeded_tensor(102, &[8, 8, 8]);
    let refined = nonlocal_refine(&fg, &params.nonlocal).unwrap();
    let oracle = oracle_neck::nonlocal_refine_ref(
        &to_nested(&fg),
        &params_to_oracle(&params),
    )
    .unwrap();
    assert!(max_abs_diff(refined.data(), &nested_flat(&oracle)) <= 1e-10);
}

#[test]
fn zero_contribution_fuse_is_the_identity() {
    let levels = seeded_levels(111, 3, 4, 16);
    let gather_shape = [4usize, 8, 8];
    let zeros: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::zeros(&gather_shape).unwrap()).collect();
    let g = Tensor::zeros(&gather_shape).unwrap();
    let out = fuse_and_scatter(&zeros, &g, &levels).unwrap();
    assert!(out.bit_eq(&levels));
}

#[test]
fn forward_shapes_match_inputs() {
    for levels_n in [2usize, 3, 4] {
        for c in [2usize, 4] {
            let levels = seeded_levels(121, levels_n, c, 16);
            let params = init_params(levels_n, c, 2, 122, false).unwrap();
            let out = smsl_forward(&levels, &params, &SmslConfig::with_r(2)).unwrap();
            assert_eq!(out.l_min(), levels.l_min());
            for (l, f) in out.levels() {
                assert_eq!(f.shape(), levels.feature(l).unwrap().shape());
            }
        }
    }
}

#[test]
fn degenerate_params_match_the_closed_form() {
    // All expansion weights and the output projection zeroed: every branch
    // fuses to the elementwise mean of the rescaled maps, the global feature
    // equals that same mean, so each output level is
    // input + resize(2 * mean(Q)).
    let levels = seeded_levels(131, 3, 8, 16);
    let mut params = init_params(3, 8, 4, 132, false).unwrap();
    zero_branch_v(&mut params);
    params.nonlocal.w_z = zeros_like(&params.nonlocal.w_z);
    let cfg = SmslConfig::with_r(4);
    let out = smsl_forward(&levels, &params, &cfg).unwrap();

    let gathered = gather(&levels, &cfg).unwrap();
    let q = channel_rescale(&gathered, &params.cr).unwrap();
    let sum = q
        .iter()
        .skip(1)
        .fold(q[0].clone(), |acc, t| kernels::add(&acc, t).unwrap());
    let doubled_mean = kernels::scale(&sum, 2.0 / 3.0).unwrap();
    for (l, f) in out.levels() {
        let native = levels.feature(l).unwrap().shape3().unwrap();
        let scattered = kernels::resize(&doubled_mean, native.h, native.w).unwrap();
        let expect = kernels::add(&scattered, levels.feature(l).unwrap()).unwrap();
        assert!(max_abs_diff(f.data(), expect.data()) <= 1e-12);
    }
}

#[test]
fn all_zero_inputs_are_a_fixed_point() {
    let features = (0..3)
        .map(|i| Tensor::zeros(&[4, 16 >> i, 16 >> i]).unwrap())
        .collect();
    let levels = LevelSet::new(3, features).unwrap();
    let params = init_params(3, 4, 2, 141, false).unwrap();
    let out = smsl_forward(&levels, &params, &SmslConfig::with_r(2)).unwrap();
    assert!(out.bit_eq(&levels));
}

#[test]
fn forward_is_bit_deterministic_across_runs_and_threads() {
    let levels = seeded_levels(151, 2, 2, 8);
    let params = init_params(2, 2, 2, 152, false).unwrap();
    let cfg = SmslConfig::with_r(2);
    let reference = smsl_forward(&levels, &params, &cfg).unwrap();
    for _ in 0..9 {
        assert!(smsl_forward(&levels, &params, &cfg).unwrap().bit_eq(&reference));
    }
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let levels = levels.clone();
            let params = params.clone();
            thread::spawn(move || smsl_forward(&levels, &params, &SmslConfig::with_r(2)).unwrap())
        })
        .collect();
    for h in handles {
        assert!(h.join().unwrap().bit_eq(&reference));
    }
}

#[test]
fn forward_agrees_with_reference_end_to_end() {
    let levels = seeded_levels(161, 3, 8, 16);
    let params = init_params(3, 8, 4, 162, false).unwrap();
    let cfg = SmslConfig::with_r(4);
    let (out, trace) = smsl_forward_traced(&levels, &params, &cfg).unwrap();
    let oracle_out = oracle_neck::reference_forward(
        &levels_to_oracle(&levels),
        &params_to_oracle(&params),
        &oracle_neck::Config {
            gather_level: 4,
            ln_eps: 1e-5,
        },
    )
    .unwrap();
    let report = smsl_oracle::compare(
        &levels_to_oracle(&out),
        &oracle_out,
        1e-10,
        1e-8,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");

    // Gate strictly inside (0, 1); attention columns normalized.
    assert!(trace.gate.data().iter().all(|&s| s > 0.0 && s < 1.0));
    for attention in &trace.attentions {
        let (l, c) = attention.dims2().unwrap();
        for col in 0..c {
            let sum: f64 = (0..l).map(|row| attention.data()[row * c + col]).sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn small_neck_gradcheck_passes() {
    let levels = seeded_levels(171, 2, 4, 8);
    let params = init_params(2, 4, 2, 172, false).unwrap();
    let cfg = SmslConfig::with_r(2);
    let report = gradcheck_smsl(
        &levels,
        &params,
        &cfg,
        &GradCheckSettings {
            seed: 173,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.passed, "{}", report.to_kv_lines());
    assert!(report.n_params_checked > 0);
}
