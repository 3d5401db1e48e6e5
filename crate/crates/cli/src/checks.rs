//! The property-check suite: oracle equivalence over a seeded configuration
//! matrix, attention normalization, degenerate-parameter identities, shape
//! contracts, per-kernel VJP dot-product tests, determinism, the neck-wide
//! gradient check and the parameter audit. `selftest` runs everything; the
//! acceptance tests drive the same functions criterion by criterion.

use std::fmt::Write as _;
use std::thread;

use smsl_core::autodiff::gradcheck::{GradCheckReport, GradCheckSettings};
use smsl_core::autodiff::{NodeId, Tape};
use smsl_core::neck::forward::{
    fuse_and_scatter, gradcheck_smsl, nonlocal_refine, selective_combine, smsl_forward,
    smsl_forward_traced,
};
use smsl_core::neck::init::{count_params, init_params, ParamCount};
use smsl_core::neck::{LevelSet, SmslConfig};
use smsl_core::tensor::kernels;
use smsl_core::{Activation, Result, Tensor};
use smsl_oracle::DiffReport;

use crate::adapt::{levels_to_oracle, params_to_oracle};
use crate::{gen_levels, gen_tensor, RunConfig};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Default tolerances of the equivalence suite.
pub const ORACLE_ABS_TOL: f64 = 1e-10;
pub const ORACLE_REL_TOL: f64 = 1e-8;

/// Ten seeded configurations spanning 2, 3 and 5 levels, 2 to 16 channels
/// and both base sizes.
pub const ORACLE_MATRIX: [RunConfig; 10] = [
    RunConfig { levels: 2, channels: 2, base: 16, r: 2, seed: 1001 },
    RunConfig { levels: 2, channels: 8, base: 32, r: 4, seed: 1002 },
    RunConfig { levels: 2, channels: 16, base: 16, r: 8, seed: 1003 },
    RunConfig { levels: 3, channels: 2, base: 32, r: 2, seed: 1004 },
    RunConfig { levels: 3, channels: 8, base: 16, r: 4, seed: 1005 },
    RunConfig { levels: 3, channels: 16, base: 32, r: 8, seed: 1006 },
    RunConfig { levels: 5, channels: 2, base: 16, r: 2, seed: 1007 },
    RunConfig { levels: 5, channels: 8, base: 32, r: 4, seed: 1008 },
    RunConfig { levels: 5, channels: 16, base: 16, r: 8, seed: 1009 },
    RunConfig { levels: 5, channels: 16, base: 32, r: 8, seed: 1010 },
];

/// Inputs come from `seed`, weights from a fixed offset of it.
pub fn seeded_setup(
    cfg: &RunConfig,
) -> Result<(LevelSet<f64>, smsl_core::neck::SmslParams<f64>, SmslConfig)> {
    let levels = gen_levels(cfg)?;
    let params = init_params(
        cfg.levels,
        cfg.channels,
        cfg.r,
        cfg.seed.wrapping_add(0x517C_C1B7),
        false,
    )?;
    Ok((levels, params, SmslConfig::with_r(cfg.r)))
}

/// Run one seeded configuration through both implementations and compare.
pub fn oracle_diff(cfg: &RunConfig, abs_tol: f64, rel_tol: f64) -> Result<DiffReport> {
    let (levels, params, smsl_cfg) = seeded_setup(cfg)?;
    let out = smsl_forward(&levels, &params, &smsl_cfg)?;
    let gather_level = smsl_cfg.resolve_gather_level(levels.l_min(), levels.l_max())?;
    let reference = smsl_oracle::reference_forward(
        &levels_to_oracle(&levels),
        &params_to_oracle(&params),
        &smsl_oracle::neck::Config {
            gather_level,
            ln_eps: smsl_cfg.ln_eps,
        },
    )
    .map_err(smsl_core::Error::Config)?;
    smsl_oracle::compare(&levels_to_oracle(&out), &reference, abs_tol, rel_tol)
        .map_err(smsl_core::Error::Config)
}

/// Oracle equivalence across the whole matrix.
pub fn check_oracle_matrix() -> Vec<Check> {
    ORACLE_MATRIX
        .iter()
        .map(|cfg| {
            let name = format!(
                "oracle_diff L={} C={} base={} seed={}",
                cfg.levels, cfg.channels, cfg.base, cfg.seed
            );
            match oracle_diff(cfg, ORACLE_ABS_TOL, ORACLE_REL_TOL) {
                Ok(report) => Check::new(
                    name,
                    report.passed,
                    format!("max_abs={:e} max_rel={:e}", report.max_abs, report.max_rel),
                ),
                Err(e) => Check::new(name, false, e.to_string()),
            }
        })
        .collect()
}

/// Attention columns sum to one and the gate stays strictly inside (0, 1)
/// over every combination run of the oracle matrix.
pub fn check_attention_normalization() -> Vec<Check> {
    let mut worst = 0.0f64;
    let mut gate_ok = true;
    let mut failures = Vec::new();
    for cfg in &ORACLE_MATRIX {
        let setup = seeded_setup(cfg).and_then(|(levels, params, smsl_cfg)| {
            smsl_forward_traced(&levels, &params, &smsl_cfg)
        });
        match setup {
            Ok((_, trace)) => {
                for attention in &trace.attentions {
                    let (l, c) = attention.dims2().unwrap();
                    for col in 0..c {
                        let sum: f64 =
                            (0..l).map(|row| attention.data()[row * c + col]).sum();
                        worst = worst.max((sum - 1.0).abs());
                    }
                }
                gate_ok &= trace.gate.data().iter().all(|&s| s > 0.0 && s < 1.0);
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    vec![
        Check::new(
            "attention_columns_sum_to_one",
            failures.is_empty() && worst <= 1e-12,
            format!("worst |sum-1| = {worst:e}"),
        ),
        Check::new(
            "gate_strictly_inside_unit_interval",
            failures.is_empty() && gate_ok,
            if failures.is_empty() { String::new() } else { failures.join("; ") },
        ),
    ]
}

/// The neck-wide gradient check at the pinned configuration.
pub fn gradcheck_reference_config(tol: f64, seed: u64) -> Result<GradCheckReport> {
    let cfg = RunConfig {
        levels: 3,
        channels: 8,
        base: 16,
        r: 4,
        seed,
    };
    let (levels, params, smsl_cfg) = seeded_setup(&cfg)?;
    gradcheck_smsl(
        &levels,
        &params,
        &smsl_cfg,
        &GradCheckSettings {
            tol,
            seed,
            ..Default::default()
        },
    )
}

fn zeros_like(t: &Tensor<f64>) -> Tensor<f64> {
    Tensor::zeros(t.shape()).unwrap()
}

/// (a) Zero expansion weights turn every combine into an elementwise mean.
pub fn check_uniform_attention_mean() -> Check {
    let run = || -> Result<f64> {
        let cfg = RunConfig { levels: 3, channels: 8, base: 16, r: 4, seed: 2001 };
        let (levels, mut params, smsl_cfg) = seeded_setup(&cfg)?;
        for b in &mut params.sfc_local {
            b.v = zeros_like(&b.v);
        }
        params.sfc_global.v = zeros_like(&params.sfc_global.v);
        let gathered = smsl_core::neck::forward::gather(&levels, &smsl_cfg)?;
        let q = smsl_core::neck::forward::channel_rescale(&gathered, &params.cr)?;
        let sum = q[1..]
            .iter()
            .try_fold(q[0].clone(), |acc, t| kernels::add(&acc, t))?;
        let mean = kernels::scale(&sum, 1.0 / q.len() as f64)?;
        let mut worst = 0.0f64;
        for branch in params.sfc_local.iter().chain([&params.sfc_global]) {
            let fused = selective_combine(&q, branch, smsl_cfg.ln_eps)?;
            for (a, b) in fused.data().iter().zip(mean.data()) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => Check::new(
            "uniform_attention_equals_mean",
            worst <= 1e-12,
            format!("worst |fused - mean| = {worst:e}"),
        ),
        Err(e) => Check::new("uniform_attention_equals_mean", false, e.to_string()),
    }
}

/// (b) Zero local and global contributions leave the inputs bit-identical.
pub fn check_zero_contribution_fuse() -> Check {
    let run = || -> Result<bool> {
        let cfg = RunConfig { levels: 3, channels: 4, base: 16, r: 2, seed: 2002 };
        let levels = gen_levels(&cfg)?;
        let gather_shape = levels.feature(4)?.shape3()?;
        let zeros: Vec<Tensor<f64>> = (0..3)
            .map(|_| Tensor::zeros(&[gather_shape.c, gather_shape.h, gather_shape.w]))
            .collect::<Result<_>>()?;
        let g = Tensor::zeros(&[gather_shape.c, gather_shape.h, gather_shape.w])?;
        Ok(fuse_and_scatter(&zeros, &g, &levels)?.bit_eq(&levels))
    };
    match run() {
        Ok(ok) => Check::new("zero_contribution_fuse_identity", ok, "bit equality"),
        Err(e) => Check::new("zero_contribution_fuse_identity", false, e.to_string()),
    }
}

/// (c) A zero output projection makes the non-local block an identity.
pub fn check_nonlocal_identity() -> Check {
    let run = || -> Result<bool> {
        let mut params = init_params(2, 8, 4, 2003, false)?;
        params.nonlocal.w_z = zeros_like(&params.nonlocal.w_z);
        let fg = gen_tensor(2004, &[8, 8, 8])?;
        Ok(nonlocal_refine(&fg, &params.nonlocal)?.bit_eq(&fg))
    };
    match run() {
        Ok(ok) => Check::new("zero_projection_nonlocal_identity", ok, "bit equality"),
        Err(e) => Check::new("zero_projection_nonlocal_identity", false, e.to_string()),
    }
}

/// (d) A zero second gate layer halves every gathered feature exactly.
pub fn check_half_gate() -> Check {
    let run = || -> Result<bool> {
        let cfg = RunConfig { levels: 3, channels: 8, base: 16, r: 4, seed: 2005 };
        let (levels, mut params, smsl_cfg) = seeded_setup(&cfg)?;
        params.cr.w2 = zeros_like(&params.cr.w2);
        let gathered = smsl_core::neck::forward::gather(&levels, &smsl_cfg)?;
        let q = smsl_core::neck::forward::channel_rescale(&gathered, &params.cr)?;
        Ok(q.iter()
            .zip(&gathered)
            .all(|(qi, di)| qi.bit_eq(&kernels::scale(di, 0.5).unwrap())))
    };
    match run() {
        Ok(ok) => Check::new("zero_gate_layer_halves_features", ok, "bit equality"),
        Err(e) => Check::new("zero_gate_layer_halves_features", false, e.to_string()),
    }
}

pub fn check_degeneracies() -> Vec<Check> {
    vec![
        check_uniform_attention_mean(),
        check_zero_contribution_fuse(),
        check_nonlocal_identity(),
        check_half_gate(),
    ]
}

/// Output shapes equal input shapes across the whole configuration matrix.
pub fn check_shape_contract() -> Check {
    let mut failures = String::new();
    let mut count = 0;
    for levels_n in [2usize, 3, 4, 5] {
        for channels in [2usize, 4, 8, 16] {
            for base in [16usize, 32] {
                count += 1;
                let cfg = RunConfig {
                    levels: levels_n,
                    channels,
                    base,
                    r: 2,
                    seed: 3000 + count,
                };
                let outcome = seeded_setup(&cfg).and_then(|(levels, params, smsl_cfg)| {
                    let out = smsl_forward(&levels, &params, &smsl_cfg)?;
                    for (l, f) in out.levels() {
                        if f.shape() != levels.feature(l)?.shape() {
                            return Err(smsl_core::Error::Config(format!(
                                "level {l}: {:?} vs {:?}",
                                f.shape(),
                                levels.feature(l)?.shape()
                            )));
                        }
                    }
                    Ok(())
                });
                if let Err(e) = outcome {
                    let _ = write!(failures, "[L={levels_n} C={channels} base={base}] {e}; ");
                }
            }
        }
    }
    Check::new(
        "shape_contract",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{count} configurations")
        } else {
            failures
        },
    )
}

/// Repeated and concurrent forwards are bit-identical.
pub fn check_determinism() -> Check {
    let run = || -> Result<bool> {
        let cfg = RunConfig { levels: 3, channels: 8, base: 16, r: 4, seed: 4001 };
        let (levels, params, smsl_cfg) = seeded_setup(&cfg)?;
        let reference = smsl_forward(&levels, &params, &smsl_cfg)?;
        for _ in 0..9 {
            if !smsl_forward(&levels, &params, &smsl_cfg)?.bit_eq(&reference) {
                return Ok(false);
            }
        }
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let levels = levels.clone();
                let params = params.clone();
                let smsl_cfg = smsl_cfg;
                thread::spawn(move || smsl_forward(&levels, &params, &smsl_cfg).unwrap())
            })
            .collect();
        for h in handles {
            if !h.join().expect("forward thread panicked").bit_eq(&reference) {
                return Ok(false);
            }
        }
        Ok(true)
    };
    match run() {
        Ok(ok) => Check::new("determinism_repeats_and_threads", ok, "10 reruns + 8 threads"),
        Err(e) => Check::new("determinism_repeats_and_threads", false, e.to_string()),
    }
}

/// Itemized parameter audit for a configuration.
pub fn audit(levels: usize, channels: usize, r: usize, extra: bool) -> Result<ParamCount> {
    let params = init_params(levels, channels, r, 0, extra)?;
    Ok(count_params(&params))
}

/// The audit at the detector-scale configuration: the gate block is exactly
/// `2 * LC * LC/r`, each branch follows its shape arithmetic, and the total
/// sits inside the published 0.8M..1.1M band.
pub fn check_param_audit() -> Check {
    let run = || -> Result<(ParamCount, bool)> {
        let count = audit(5, 256, 8, false)?;
        let lc = 5 * 256;
        let cr_expected = 2 * lc * (lc / 8);
        let branch_expected = (256 / 8) * 256 + 2 * (256 / 8) + lc * (256 / 8);
        let ok = count.cr == cr_expected
            && count.cr == 409_600
            && count.per_branch() == branch_expected
            && count.sfc_local == 5 * branch_expected
            && (800_000..=1_100_000).contains(&count.total());
        Ok((count, ok))
    };
    match run() {
        Ok((count, ok)) => Check::new(
            "param_audit_detector_scale",
            ok,
            format!(
                "cr={} per_branch={} total={}",
                count.cr,
                count.per_branch(),
                count.total()
            ),
        ),
        Err(e) => Check::new("param_audit_detector_scale", false, e.to_string()),
    }
}

// Per-kernel dot-product tests: <v, (k(u+ew)-k(u-ew))/2e> against
// <VJP_k(v), w> for each input slot.

struct DotCase {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    tape_op: Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<Vec<NodeId>>>,
    eager: Box<dyn Fn(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>>,
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn run_dot_case(case: &DotCase, seed: u64, tol: f64) -> Check {
    const EPS: f64 = 1e-6;
    let run = || -> Result<f64> {
        let outputs = (case.eager)(&case.inputs)?;
        let cotangents: Vec<Tensor<f64>> = outputs
            .iter()
            .enumerate()
            .map(|(i, o)| gen_tensor(seed + 900 + i as u64, o.shape()))
            .collect::<Result<_>>()?;

        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = case.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let outs = (case.tape_op)(&mut tape, &leaves)?;
        let mut loss = None;
        for (out, v) in outs.iter().zip(&cotangents) {
            let vid = tape.leaf(v.clone());
            let prod = tape.mul(*out, vid)?;
            let s = tape.sum_all(prod)?;
            loss = Some(match loss {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        let grads = tape.backward(loss.expect("kernel has outputs"))?;

        let scalar = |inputs: &[Tensor<f64>]| -> Result<f64> {
            Ok((case.eager)(inputs)?
                .iter()
                .zip(&cotangents)
                .map(|(o, v)| dot(o, v))
                .sum())
        };
        let mut worst = 0.0f64;
        for (slot, input) in case.inputs.iter().enumerate() {
            let dir = gen_tensor(seed + 100 + slot as u64, input.shape())?;
            let analytic = grads
                .get(leaves[slot])?
                .map(|g| dot(g, &dir))
                .unwrap_or(0.0);
            let shift = |step: f64| -> Result<f64> {
                let mut probe = case.inputs.to_vec();
                let data = probe[slot]
                    .data()
                    .iter()
                    .zip(dir.data())
                    .map(|(&u, &w)| u + step * w)
                    .collect();
                probe[slot] = Tensor::new(probe[slot].shape().to_vec(), data)?;
                scalar(&probe)
            };
            let numeric = (shift(EPS)? - shift(-EPS)?) / (2.0 * EPS);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => Check::new(
            format!("vjp_dot_{}", case.name),
            worst <= tol,
            format!("worst rel err {worst:e}"),
        ),
        Err(e) => Check::new(format!("vjp_dot_{}", case.name), false, e.to_string()),
    }
}

/// Dot-product tests for the nine kernels of the dense set.
pub fn check_vjp_dot_products(tol: f64) -> Vec<Check> {
    let t = |seed: u64, shape: &[usize]| gen_tensor(seed, shape).unwrap();
    // The max-pool case needs window values far apart relative to the probe
    // step; 7 generates the residues mod 32.
    let pool_input = Tensor::new(
        vec![2, 4, 4],
        (0..32).map(|i| ((i * 7) % 32) as f64 * 0.1 - 1.6).collect(),
    )
    .unwrap();
    // ReLU probes must stay off the kink.
    let relu_input = Tensor::new(
        vec![3, 4],
        t(5001, &[3, 4])
            .data()
            .iter()
            .map(|&v| if v.abs() < 0.05 { v + 0.1 } else { v })
            .collect(),
    )
    .unwrap();

    let cases = vec![
        DotCase {
            name: "matmul",
            inputs: vec![t(5002, &[4, 6]), t(5003, &[6, 3])],
            tape_op: Box::new(|tp, l| Ok(vec![tp.matmul(l[0], l[1])?])),
            eager: Box::new(|i| Ok(vec![kernels::matmul(&i[0], &i[1])?])),
        },
        DotCase {
            name: "global_avg_pool",
            inputs: vec![t(5004, &[5, 4, 6])],
            tape_op: Box::new(|tp, l| Ok(vec![tp.global_avg_pool(l[0])?])),
            eager: Box::new(|i| Ok(vec![kernels::global_avg_pool(&i[0])?])),
        },
        DotCase {
            name: "activation_sigmoid",
            inputs: vec![t(5005, &[3, 4])],
            tape_op: Box::new(|tp, l| Ok(vec![tp.activation(l[0], Activation::Sigmoid)?])),
            eager: Box::new(|i| Ok(vec![kernels::activation(&i[0], Activation::Sigmoid)?])),
        },
        DotCase {
            name: "activation_relu",
            inputs: vec![relu_input],
            tape_op: Box::new(|tp, l| Ok(vec![tp.activation(l[0], Activation::Relu)?])),
            eager: Box::new(|i| Ok(vec![kernels::activation(&i[0], Activation::Relu)?])),
        },
        DotCase {
            name: "softmax_over_levels",
            inputs: vec![t(5006, &[4, 7])],
            tape_op: Box::new(|tp, l| Ok(vec![tp.softmax_over_levels(l[0])?])),
            eager: Box::new(|i| Ok(vec![kernels::softmax_over_levels(&i[0])?])),
        },
        DotCase {
            name: "layer_norm",
            inputs: vec![t(5007, &[12]), t(5008, &[12]), t(5009, &[12])],
            tape_op: Box::new(|tp, l| Ok(vec![tp.layer_norm(l[0], l[1], l[2], 1e-5)?])),
            eager: Box::new(|i| Ok(vec![kernels::layer_norm(&i[0], &i[1], &i[2], 1e-5)?])),
        },
        DotCase {
            name: "resize_bilinear",
            inputs: vec![t(5010, &[2, 3, 5])],
            tape_op: Box::new(|tp, l| Ok(vec![tp.resize(l[0], 6, 10)?])),
            eager: Box::new(|i| Ok(vec![kernels::resize(&i[0], 6, 10)?])),
        },
        DotCase {
            name: "resize_maxpool",
            inputs: vec![pool_input],
            tape_op: Box::new(|tp, l| Ok(vec![tp.resize(l[0], 2, 2)?])),
            eager: Box::new(|i| Ok(vec![kernels::resize(&i[0], 2, 2)?])),
        },
        DotCase {
            name: "concat_channels",
            inputs: vec![t(5011, &[2, 3, 3]), t(5012, &[3, 3, 3])],
            tape_op: Box::new(|tp, l| Ok(vec![tp.concat_channels(l)?])),
            eager: Box::new(|i| Ok(vec![kernels::concat_channels(i)?])),
        },
        DotCase {
            name: "split_channels",
            inputs: vec![t(5013, &[6, 3, 3])],
            tape_op: Box::new(|tp, l| tp.split_channels(l[0], 3)),
            eager: Box::new(|i| kernels::split_channels(&i[0], 3)),
        },
        DotCase {
            name: "conv2d",
            inputs: vec![t(5014, &[3, 6, 6]), t(5015, &[2, 3, 3, 3])],
            tape_op: Box::new(|tp, l| Ok(vec![tp.conv2d(l[0], l[1], 2, 1)?])),
            eager: Box::new(|i| Ok(vec![kernels::conv2d(&i[0], &i[1], 2, 1)?])),
        },
    ];
    cases
        .iter()
        .enumerate()
        .map(|(i, case)| run_dot_case(case, 6000 + i as u64 * 37, tol))
        .collect()
}

/// Everything, in a stable order.
pub fn run_all() -> Vec<Check> {
    let mut checks = Vec::new();
    checks.extend(check_oracle_matrix());
    checks.extend(check_attention_normalization());
    match gradcheck_reference_config(1e-5, 7) {
        Ok(report) => checks.push(Check::new(
            "gradcheck_neck",
            report.passed,
            format!(
                "max_rel_err={:e} checked={} skipped={}",
                report.max_rel_err, report.n_params_checked, report.n_skipped
            ),
        )),
        Err(e) => checks.push(Check::new("gradcheck_neck", false, e.to_string())),
    }
    checks.extend(check_degeneracies());
    checks.push(check_shape_contract());
    checks.push(check_param_audit());
    checks.push(check_determinism());
    checks.extend(check_vjp_dot_products(1e-5));
    checks
}
