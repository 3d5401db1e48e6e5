use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use smsl_cli::commands::{self, CmdResult};
use smsl_core::DType;

/// Selective multi-scale neck: parameter generation, forwards, gradient
/// checks, oracle diffs, parameter audits and micro-benchmarks.
#[derive(Parser)]
#[command(name = "smsl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DTypeArg {
    F32,
    F64,
}

impl From<DTypeArg> for DType {
    fn from(v: DTypeArg) -> Self {
        match v {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded parameter bundle (manifest + SMST tensors).
    InitParams {
        #[arg(long = "L")]
        levels: usize,
        #[arg(long = "C")]
        channels: usize,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also generate the two stride-2 extra-level convolutions.
        #[arg(long)]
        extra_convs: bool,
    },
    /// Write a seeded input pyramid (level_<l>.smst + levels.txt).
    GenInput {
        #[arg(long = "L")]
        levels: usize,
        #[arg(long = "C")]
        channels: usize,
        /// Base spatial size at level 3.
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = DTypeArg::F64)]
        dtype: DTypeArg,
    },
    /// Run the neck on a stored input pyramid.
    Forward {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the gather level (defaults to the middle level).
        #[arg(long)]
        gather_level: Option<usize>,
    },
    /// Compare tape gradients against central differences; exit 0 iff pass.
    Gradcheck {
        #[arg(long = "L")]
        levels: usize,
        #[arg(long = "C")]
        channels: usize,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 16)]
        size: usize,
        /// Base finite-difference step (scaled per coordinate).
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
    /// Compare the forward pass against the naive reference; exit 0 iff pass.
    OracleDiff {
        #[arg(long = "L")]
        levels: usize,
        #[arg(long = "C")]
        channels: usize,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-10)]
        abs_tol: f64,
        #[arg(long, default_value_t = 1e-8)]
        rel_tol: f64,
        #[arg(long, default_value_t = 16)]
        size: usize,
    },
    /// Print the itemized count of scalar learnables.
    ParamAudit {
        #[arg(long = "L")]
        levels: usize,
        #[arg(long = "C")]
        channels: usize,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        extra_convs: bool,
    },
    /// Measure forward latency and throughput on f32 data.
    Bench {
        #[arg(long = "L")]
        levels: usize,
        #[arg(long = "C")]
        channels: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 8)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the whole property suite; exit 0 iff everything passes.
    Selftest,
}

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::InitParams {
            levels,
            channels,
            r,
            seed,
            out,
            extra_convs,
        } => commands::init_params_cmd(levels, channels, r, seed, &out, extra_convs),
        Command::GenInput {
            levels,
            channels,
            size,
            seed,
            out,
            dtype,
        } => commands::gen_input_cmd(levels, channels, size, seed, &out, dtype.into()),
        Command::Forward {
            params,
            input,
            out,
            gather_level,
        } => commands::forward_cmd(&params, &input, &out, gather_level),
        Command::Gradcheck {
            levels,
            channels,
            r,
            seed,
            tol,
            size,
            step,
        } => commands::gradcheck_cmd(levels, channels, r, seed, tol, size, step),
        Command::OracleDiff {
            levels,
            channels,
            r,
            seed,
            abs_tol,
            rel_tol,
            size,
        } => commands::oracle_diff_cmd(levels, channels, r, seed, abs_tol, rel_tol, size),
        Command::ParamAudit {
            levels,
            channels,
            r,
            extra_convs,
        } => commands::param_audit_cmd(levels, channels, r, extra_convs),
        Command::Bench {
            levels,
            channels,
            size,
            iters,
            threads,
            r,
            seed,
        } => commands::bench_cmd(levels, channels, size, iters, threads, r, seed),
        Command::Selftest => commands::selftest_cmd(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(outcome) => ExitCode::from(outcome.code() as u8),
        Err(err) => {
            let kind = match &err {
                smsl_core::Error::Io(_) | smsl_core::Error::Format(_) => "io",
                smsl_core::Error::Config(_) => "usage",
                _ => "internal",
            };
            eprintln!("error={kind} message=\"{err}\"");
            ExitCode::from(2)
        }
    }
}
