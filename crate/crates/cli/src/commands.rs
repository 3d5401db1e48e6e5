//! Subcommand implementations. Every command prints stable line-oriented
//! `key=value` output; check commands return exit code 1 on failure, IO and
//! usage problems exit 2 with a machine-readable reason on stderr.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use smsl_core::autodiff::gradcheck::GradCheckSettings;
use smsl_core::neck::forward::{gradcheck_smsl, smsl_forward};
use smsl_core::neck::init::init_params;
use smsl_core::neck::manifest::{load_params, peek_params_dtype, save_params, ParamsMeta};
use smsl_core::neck::{LevelSet, SmslConfig};
use smsl_core::{DType, Scalar};

use crate::checks::{self, ORACLE_MATRIX};
use crate::levels_io::{load_levels, save_levels, AnyLevels};
use crate::{gen_levels, RunConfig};

/// Exit status of a command: `Pass` is 0, `CheckFailed` is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    CheckFailed,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::CheckFailed => 1,
        }
    }
}

/// IO and usage failures, reported on stderr and mapped to exit code 2.
pub type CmdResult = Result<Outcome, smsl_core::Error>;

pub fn init_params_cmd(
    levels: usize,
    channels: usize,
    r: usize,
    seed: u64,
    out: &Path,
    extra_convs: bool,
) -> CmdResult {
    let params = init_params(levels, channels, r, seed, extra_convs)?;
    let meta = ParamsMeta {
        levels,
        channels,
        r,
        seed,
    };
    save_params(out, &params, &meta)?;
    println!("params_dir={}", out.display());
    println!("tensors={}", params.to_param_set().entries.len());
    Ok(Outcome::Pass)
}

pub fn gen_input_cmd(
    levels: usize,
    channels: usize,
    base: usize,
    seed: u64,
    out: &Path,
    dtype: DType,
) -> CmdResult {
    let cfg = RunConfig {
        levels,
        channels,
        base,
        r: 1,
        seed,
    };
    let set = gen_levels(&cfg)?;
    match dtype {
        DType::F64 => save_levels(out, &set)?,
        DType::F32 => save_levels(out, &set.cast::<f32>())?,
    }
    println!("input_dir={}", out.display());
    println!("l_min=3");
    println!("l_max={}", 3 + levels - 1);
    Ok(Outcome::Pass)
}

fn forward_typed<E: Scalar>(
    params_dir: &Path,
    levels: LevelSet<E>,
    out_dir: &Path,
    gather_level: Option<usize>,
) -> CmdResult {
    let (params, meta) = load_params::<E>(params_dir)?;
    let cfg = SmslConfig {
        gather_level,
        r: meta.r,
        ln_eps: 1e-5,
    };
    let out = smsl_forward(&levels, &params, &cfg)?;
    save_levels(out_dir, &out)?;
    for (l, _) in out.levels() {
        println!("written={}", out_dir.join(crate::levels_io::level_file(l)).display());
    }
    Ok(Outcome::Pass)
}

pub fn forward_cmd(
    params_dir: &Path,
    input_dir: &Path,
    out_dir: &Path,
    gather_level: Option<usize>,
) -> CmdResult {
    let params_dtype = peek_params_dtype(params_dir)?;
    match load_levels(input_dir)? {
        AnyLevels::F64(levels) => {
            if params_dtype != DType::F64 {
                return Err(smsl_core::Error::Config(
                    "input is f64 but the parameter bundle is f32".into(),
                ));
            }
            forward_typed(params_dir, levels, out_dir, gather_level)
        }
        AnyLevels::F32(levels) => {
            if params_dtype != DType::F32 {
                return Err(smsl_core::Error::Config(
                    "input is f32 but the parameter bundle is f64".into(),
                ));
            }
            forward_typed(params_dir, levels, out_dir, gather_level)
        }
    }
}

pub fn gradcheck_cmd(
    levels: usize,
    channels: usize,
    r: usize,
    seed: u64,
    tol: f64,
    base: usize,
    step: f64,
) -> CmdResult {
    let cfg = RunConfig {
        levels,
        channels,
        base,
        r,
        seed,
    };
    let (level_set, params, smsl_cfg) = checks::seeded_setup(&cfg)?;
    let report = gradcheck_smsl(
        &level_set,
        &params,
        &smsl_cfg,
        &GradCheckSettings {
            base_step: step,
            tol,
            seed,
            ..Default::default()
        },
    )?;
    print!("{}", report.to_kv_lines());
    Ok(if report.passed {
        Outcome::Pass
    } else {
        Outcome::CheckFailed
    })
}

pub fn oracle_diff_cmd(
    levels: usize,
    channels: usize,
    r: usize,
    seed: u64,
    abs_tol: f64,
    rel_tol: f64,
    base: usize,
) -> CmdResult {
    let cfg = RunConfig {
        levels,
        channels,
        base,
        r,
        seed,
    };
    let report = checks::oracle_diff(&cfg, abs_tol, rel_tol)?;
    print!("{}", report.to_kv_lines(abs_tol, rel_tol));
    Ok(if report.passed {
        Outcome::Pass
    } else {
        Outcome::CheckFailed
    })
}

pub fn param_audit_cmd(levels: usize, channels: usize, r: usize, extra: bool) -> CmdResult {
    let count = checks::audit(levels, channels, r, extra)?;
    println!("L={levels}");
    println!("C={channels}");
    println!("r={r}");
    println!("cr={}", count.cr);
    println!("sfc_local={}", count.sfc_local);
    println!("sfc_global={}", count.sfc_global);
    println!("sfc_per_branch={}", count.per_branch());
    println!("nonlocal={}", count.nonlocal);
    println!("extra={}", count.extra);
    println!("total={}", count.total());
    Ok(Outcome::Pass)
}

fn percentile(sorted: &[Duration], p: f64) -> Duration {
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx]
}

pub fn bench_cmd(
    levels: usize,
    channels: usize,
    base: usize,
    iters: usize,
    threads: usize,
    r: usize,
    seed: u64,
) -> CmdResult {
    let iters = iters.max(30);
    let threads = threads.max(1);
    let cfg = RunConfig {
        levels,
        channels,
        base,
        r,
        seed,
    };
    let (level_set, params, smsl_cfg) = checks::seeded_setup(&cfg)?;
    let level_set = level_set.cast::<f32>();
    let params = params.cast::<f32>();

    for _ in 0..5 {
        smsl_forward(&level_set, &params, &smsl_cfg)?;
    }
    let reference = smsl_forward(&level_set, &params, &smsl_cfg)?;

    let started = Instant::now();
    let mut samples: Vec<Duration> = Vec::with_capacity(iters * threads);
    let mut deterministic = true;
    if threads == 1 {
        for _ in 0..iters {
            let t0 = Instant::now();
            let out = smsl_forward(&level_set, &params, &smsl_cfg)?;
            samples.push(t0.elapsed());
            deterministic &= out.bit_eq(&reference);
        }
    } else {
        let workers: Vec<_> = (0..threads)
            .map(|_| {
                let level_set = level_set.clone();
                let params = params.clone();
                std::thread::spawn(move || {
                    let mut local = Vec::with_capacity(iters);
                    let mut all_equal = true;
                    let mine = smsl_forward(&level_set, &params, &smsl_cfg).unwrap();
                    for _ in 0..iters {
                        let t0 = Instant::now();
                        let out = smsl_forward(&level_set, &params, &smsl_cfg).unwrap();
                        local.push(t0.elapsed());
                        all_equal &= out.bit_eq(&mine);
                    }
                    (local, all_equal, mine)
                })
            })
            .collect();
        for w in workers {
            let (local, all_equal, mine) = w.join().expect("bench thread panicked");
            samples.extend(local);
            deterministic &= all_equal && mine.bit_eq(&reference);
        }
    }
    let wall = started.elapsed();

    samples.sort();
    let median = percentile(&samples, 0.5);
    let p95 = percentile(&samples, 0.95);
    let total_forwards = samples.len();
    println!("L={levels}");
    println!("C={channels}");
    println!("size={base}");
    println!("dtype=f32");
    println!("iters={iters}");
    println!("threads={threads}");
    println!("warmup=5");
    println!("median_us={}", median.as_micros());
    println!("p95_us={}", p95.as_micros());
    println!(
        "throughput_per_s={:.1}",
        total_forwards as f64 / wall.as_secs_f64()
    );
    println!("determinism={}", if deterministic { "ok" } else { "violated" });
    Ok(if deterministic {
        Outcome::Pass
    } else {
        Outcome::CheckFailed
    })
}

pub fn selftest_cmd() -> CmdResult {
    let checks = checks::run_all();
    let mut failed = 0;
    for check in &checks {
        println!(
            "check={} status={}{}",
            check.name,
            if check.passed { "pass" } else { "FAIL" },
            if check.detail.is_empty() {
                String::new()
            } else {
                format!(" detail=\"{}\"", check.detail)
            }
        );
        if !check.passed {
            failed += 1;
        }
    }
    println!("checks={} failed={failed}", checks.len());
    Ok(if failed == 0 {
        Outcome::Pass
    } else {
        Outcome::CheckFailed
    })
}

/// Paths kept in one place so integration tests can reuse them.
pub fn default_oracle_matrix() -> &'static [RunConfig] {
    &ORACLE_MATRIX
}

pub fn path_buf(s: &str) -> PathBuf {
    PathBuf::from(s)
}
