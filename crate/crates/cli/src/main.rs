//! `rsa-lab`: verification suites, cost counters, benchmarks and the motion
//! probe. Every command prints a JSON report on stdout. Exit status is 0 on
//! success, 1 when a check fails and 2 on usage or configuration errors.

mod commands;
mod config;
mod error;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsa_core::analysis::{Dtype, Impl};
use rsa_core::grad::ForwardPath;
use rsa_core::par;
use rsa_core::probe::TransformKind;
use rsa_core::tensor::NeighborhoodSpec;

use crate::commands::Outcome;
use crate::config::load;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "rsa-lab",
    version,
    about = "Relational self-attention verification, cost and probe tools"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration document for the command; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Floating-point type: f32 or f64.
    #[arg(long, global = true)]
    dtype: Option<Dtype>,
    /// Worker threads; 1 runs serially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for the report and any CSV, checkpoint or kernel files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare the factorised forwards against the reference path.
    Equiv {
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Check analytic RSA gradients against central differences.
    Gradcheck {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
        /// reference, fast or multi-query.
        #[arg(long)]
        path: Option<ForwardPath>,
        #[arg(long)]
        coords: Option<usize>,
        /// Corrupt one analytic gradient entry; the check must then fail.
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Time forward passes over a kernel-size grid.
    Bench {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        /// Alternate repeats across configurations.
        #[arg(long)]
        interleave: bool,
    },
    /// Count FLOPs, parameters and working set.
    Flops {
        #[command(flatten)]
        grid: GridArgs,
        /// Context sizes M, e.g. `128,256`.
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<usize>>,
    },
    /// Train the moving-bar probe and report accuracy and paired-logit gaps.
    Probe {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Write basic/relational/attention kernels for a clip and its reversal.
    DumpKernels {
        #[command(flatten)]
        model: ModelArgs,
        /// Checkpoint manifest written by `probe`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index into the test split.
        #[arg(long)]
        clip: Option<usize>,
        /// Target `t,h,w`; the grid centre by default.
        #[arg(long, value_parser = parse_position)]
        position: Option<[usize; 3]>,
    },
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Kernel sizes, e.g. `3x3x3,3x5x5,3x7x7,3x9x9,5x7x7,5x9x9`.
    #[arg(long, value_delimiter = ',')]
    kernel_sizes: Option<Vec<NeighborhoodSpec>>,
    /// Implementations, e.g. `reference,efficient`.
    #[arg(long, value_delimiter = ',')]
    impls: Option<Vec<Impl>>,
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// rsa, sa-content, sa-full or involution.
    #[arg(long)]
    transform: Option<TransformKind>,
    #[arg(long)]
    channels: Option<usize>,
}

fn parse_position(text: &str) -> std::result::Result<[usize; 3], String> {
    let parts = text
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    <[usize; 3]>::try_from(parts).map_err(|_| "expected t,h,w".to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let c = &cli.common;
    let path = c.config.as_deref();
    let out = c.out.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    if c.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let dtype = c.dtype.unwrap_or_default();
    match cli.command {
        Command::Equiv { tolerance } => {
            let mut cfg: config::EquivConfig = load(path)?;
            set(&mut cfg.seed, c.seed);
            set(&mut cfg.dtype, c.dtype);
            if tolerance.is_some() {
                cfg.tolerance = tolerance;
            }
            par::with_threads(c.threads, || commands::equiv(&cfg))
        }
        Command::Gradcheck {
            eps,
            tolerance,
            path: fwd,
            coords,
            corrupt_gradient,
        } => {
            let mut cfg: config::GradcheckConfig = load(path)?;
            set(&mut cfg.case.seed, c.seed);
            set(&mut cfg.eps, eps);
            set(&mut cfg.tolerance, tolerance);
            set(&mut cfg.path, fwd);
            set(&mut cfg.coords_per_tensor, coords);
            cfg.corrupt |= corrupt_gradient;
            par::with_threads(c.threads, || commands::gradcheck(&cfg, dtype))
        }
        Command::Bench {
            grid,
            repeats,
            warmup,
            batch,
            interleave,
        } => {
            let mut cfg: config::BenchConfig = load(path)?;
            set(&mut cfg.seed, c.seed);
            set(&mut cfg.dtype, c.dtype);
            if c.threads.is_some() {
                cfg.threads = c.threads;
            }
            set(&mut cfg.kernel_sizes, grid.kernel_sizes);
            set(&mut cfg.impls, grid.impls);
            set(&mut cfg.rsa.channels, grid.channels);
            set(&mut cfg.repeats, repeats);
            set(&mut cfg.warmup, warmup);
            set(&mut cfg.batch, batch);
            cfg.interleave |= interleave;
            commands::bench(&cfg, out)
        }
        Command::Flops { grid, windows } => {
            let mut cfg: config::FlopsConfig = load(path)?;
            if let Some(k) = grid.kernel_sizes {
                cfg.windows = k.iter().map(NeighborhoodSpec::size).collect();
            }
            set(&mut cfg.windows, windows);
            set(&mut cfg.impls, grid.impls);
            set(&mut cfg.dims.channels, grid.channels);
            par::with_threads(c.threads, || commands::flops(&cfg, out))
        }
        Command::Probe {
            model,
            epochs,
            lr,
            batch_size,
            per_class,
        } => {
            let mut cfg: config::ProbeRunConfig = load(path)?;
            set(&mut cfg.data.seed, c.seed);
            set(&mut cfg.train.seed, c.seed);
            set(&mut cfg.model.transform, model.transform);
            set(&mut cfg.model.channels, model.channels);
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.lr, lr);
            set(&mut cfg.train.batch_size, batch_size);
            set(&mut cfg.data.per_class, per_class);
            par::with_threads(c.threads, || commands::probe(&cfg, dtype, out))
        }
        Command::DumpKernels {
            model,
            checkpoint,
            clip,
            position,
        } => {
            let mut cfg: config::DumpConfig = load(path)?;
            set(&mut cfg.seed, c.seed);
            set(&mut cfg.model.transform, model.transform);
            set(&mut cfg.model.channels, model.channels);
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            set(&mut cfg.clip, clip);
            if position.is_some() {
                cfg.position = position;
            }
            par::with_threads(c.threads, || commands::dump(&cfg, dtype, out))
        }
    }
}

fn write_report(outcome: &Outcome, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&outcome.report)?;
    let mut stdout = io::stdout().lock();
    match writeln!(stdout, "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => return Err(e.into()),
        _ => {}
    }
    if let Some(dir) = out {
        let name = outcome.report["command"].as_str().unwrap_or("report");
        fs::write(dir.join(format!("{name}.json")), text + "\n")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.common.out.clone();
    let result = run(cli).and_then(|outcome| {
        write_report(&outcome, out.as_deref())?;
        Ok(outcome.passed)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("rsa-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
