use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cost::{cost_report, CostReport, Dims, Impl};
use super::stats::{mad, median};
use crate::baselines::{
    convolution, involution, lambda_conv, self_attention, ConvParams, InvolutionParams, LambdaParams, SaFlags, SaParams,
};
use crate::rsa::{multi_query_forward, rsa_forward_fast, rsa_forward_reference, RsaConfig, RsaParams};
use crate::tensor::{derive_seed, seeded, FeatureMap, GridShape};
use crate::{par, Error, Real, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        })
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            _ => Err(Error::config(format!("unknown dtype {s:?}"))),
        }
    }
}

/// One timed configuration. RSA hyper-parameters double as the baselines'
/// channel count and window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCase {
    pub id: String,
    #[serde(rename = "impl")]
    pub imp: Impl,
    pub batch: usize,
    pub time: usize,
    pub height: usize,
    pub width: usize,
    pub config: RsaConfig,
}

impl BenchCase {
    pub fn dims(&self) -> Dims {
        Dims::from_config(self.batch, self.time, self.height, self.width, &self.config)
    }

    pub fn grid(&self) -> GridShape {
        GridShape::new(self.batch, self.time, self.height, self.width, self.config.channels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchOptions {
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    pub dtype: Dtype,
    /// Worker threads for the timed calls; `Some(1)` isolates algorithmic cost.
    pub threads: Option<usize>,
    /// Configurations whose counted working set exceeds this many elements are skipped.
    pub max_workset: u64,
    /// Round-robin the repeats across cases instead of timing each case in one stretch.
    #[serde(default)]
    pub interleave: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repeats: 5,
            warmup: 2,
            seed: 0,
            dtype: Dtype::F64,
            threads: None,
            max_workset: 1 << 28,
            interleave: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config_id: String,
    #[serde(rename = "impl")]
    pub imp: Impl,
    pub median_ns: f64,
    pub mad_ns: f64,
    pub repeats: usize,
    pub dtype: Dtype,
    pub cost: CostReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSkip {
    pub config_id: String,
    #[serde(rename = "impl")]
    pub imp: Impl,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchOutput {
    pub results: Vec<BenchResult>,
    pub skipped: Vec<BenchSkip>,
}

impl BenchOutput {
    pub fn find(&self, config_id: &str, imp: Impl) -> Option<&BenchResult> {
        self.results.iter().find(|r| r.config_id == config_id && r.imp == imp)
    }
}

pub const CSV_HEADER: &str = "config_id,impl,median_ns,mad_ns,repeats,dtype,flops,params,workset";

/// Writes one CSV row per result under [`CSV_HEADER`].
pub fn write_csv(results: &[BenchResult], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.config_id, r.imp, r.median_ns, r.mad_ns, r.repeats, r.dtype, r.cost.flops, r.cost.params, r.cost.workset
        )?;
    }
    Ok(())
}

/// Standard-normal input for `case`, a function of the seed and grid only,
/// so every impl of one configuration sees the same tensor.
pub fn bench_input<T: Real>(case: &BenchCase, seed: u64) -> Result<FeatureMap<T>> {
    let grid = case.grid();
    grid.validate()?;
    let tag = [grid.batch, grid.time, grid.height, grid.width, grid.channels]
        .iter()
        .fold(0u64, |h, &v| h.wrapping_mul(1_000_003).wrapping_add(v as u64));
    FeatureMap::random_normal(grid, 1.0, &mut seeded(derive_seed(seed, tag)))
}

type Forward<T> = Box<dyn Fn(&FeatureMap<T>) -> Result<FeatureMap<T>>>;

fn forward_for<T: Real>(case: &BenchCase, seed: u64) -> Result<Forward<T>> {
    let cfg = case.config;
    let (c, m, spec) = (cfg.channels, cfg.window.size(), cfg.window);
    let pseed = derive_seed(seed, 7);
    Ok(match case.imp {
        Impl::Reference | Impl::Efficient | Impl::MultiQuery => {
            let p = RsaParams::<T>::random(cfg, pseed)?;
            match case.imp {
                Impl::Reference => Box::new(move |x| rsa_forward_reference(x, &p)),
                Impl::Efficient => Box::new(move |x| rsa_forward_fast(x, &p)),
                _ => Box::new(move |x| multi_query_forward(x, &p)),
            }
        }
        Impl::Conv => {
            let p = ConvParams::random(c, c, m, pseed);
            Box::new(move |x| convolution(x, &spec, &p))
        }
        Impl::SelfAttention => {
            let p = SaParams::random(c, m, SaFlags::FULL, pseed);
            Box::new(move |x| self_attention(x, &spec, &p))
        }
        Impl::Involution => {
            let p = InvolutionParams::random(c, m, pseed);
            Box::new(move |x| involution(x, &spec, &p))
        }
        Impl::Lambda => {
            let p = LambdaParams::random(c, m, pseed);
            Box::new(move |x| lambda_conv(x, &spec, &p))
        }
    })
}

type Runner = Box<dyn FnMut() -> Result<()>>;

fn runner<T: Real>(case: &BenchCase, seed: u64) -> Result<Runner> {
    let x = bench_input::<T>(case, seed)?;
    case.config.window.check_grid(&x.shape())?;
    let f = forward_for::<T>(case, seed)?;
    Ok(Box::new(move || {
        std::hint::black_box(f(&x)?);
        Ok(())
    }))
}

fn timed(run: &mut Runner) -> Result<f64> {
    let start = Instant::now();
    run()?;
    Ok(start.elapsed().as_nanos() as f64)
}

struct Slot {
    case: usize,
    cost: CostReport,
    run: Runner,
    samples: Vec<f64>,
}

/// Times every case. Invalid or oversized configurations are reported in
/// `skipped` rather than failing the run. With `interleave`, the timed
/// repeats go round-robin over the cases so slow drift of the machine
/// affects all of them alike.
pub fn bench_run(cases: &[BenchCase], opts: &BenchOptions) -> Result<BenchOutput> {
    if opts.repeats < 5 {
        return Err(Error::config(format!("repeats {} below 5", opts.repeats)));
    }
    if opts.warmup < 2 {
        return Err(Error::config(format!("warmup {} below 2", opts.warmup)));
    }
    if cases.is_empty() {
        return Err(Error::config("empty benchmark grid"));
    }
    par::with_threads(opts.threads, || {
        let mut out = BenchOutput::default();
        let skip = |i: usize, reason: String| BenchSkip {
            config_id: cases[i].id.clone(),
            imp: cases[i].imp,
            reason,
        };
        let mut slots = Vec::new();
        for (i, case) in cases.iter().enumerate() {
            let cost = match cost_report(&case.dims(), case.imp) {
                Ok(c) => c,
                Err(e) => {
                    out.skipped.push(skip(i, e.to_string()));
                    continue;
                }
            };
            if cost.workset > opts.max_workset {
                out.skipped.push(skip(
                    i,
                    format!("working set {} exceeds limit {}", cost.workset, opts.max_workset),
                ));
                continue;
            }
            let built = match opts.dtype {
                Dtype::F32 => runner::<f32>(case, opts.seed),
                Dtype::F64 => runner::<f64>(case, opts.seed),
            };
            match built {
                Ok(run) => slots.push(Slot {
                    case: i,
                    cost,
                    run,
                    samples: Vec::with_capacity(opts.repeats),
                }),
                Err(e) => out.skipped.push(skip(i, e.to_string())),
            }
        }
        let mut failed: Vec<Option<String>> = vec![None; slots.len()];
        let mut step = |k: usize, slot: &mut Slot, record: bool| {
            if failed[k].is_some() {
                return;
            }
            match timed(&mut slot.run) {
                Ok(t) if record => slot.samples.push(t),
                Ok(_) => {}
                Err(e) => failed[k] = Some(e.to_string()),
            }
        };
        if opts.interleave {
            for r in 0..opts.warmup + opts.repeats {
                for (k, slot) in slots.iter_mut().enumerate() {
                    step(k, slot, r >= opts.warmup);
                }
            }
        } else {
            for (k, slot) in slots.iter_mut().enumerate() {
                for r in 0..opts.warmup + opts.repeats {
                    step(k, slot, r >= opts.warmup);
                }
            }
        }
        for (slot, err) in slots.into_iter().zip(failed) {
            let case = &cases[slot.case];
            match err {
                Some(e) => out.skipped.push(skip(slot.case, e)),
                None => out.results.push(BenchResult {
                    config_id: case.id.clone(),
                    imp: case.imp,
                    median_ns: median(&slot.samples),
                    mad_ns: mad(&slot.samples),
                    repeats: slot.samples.len(),
                    dtype: opts.dtype,
                    cost: slot.cost,
                }),
            }
        }
        Ok(out)
    })
}

/// The kernel-size grid `3×3×3 … 5×9×9` for each impl, at the given size.
pub fn kernel_grid(impls: &[Impl], kernels: &[crate::tensor::NeighborhoodSpec], base: &BenchCase) -> Vec<BenchCase> {
    let mut out = Vec::new();
    for &imp in impls {
        for spec in kernels {
            let mut case = base.clone();
            case.imp = imp;
            case.config.window = *spec;
            case.id = format!("k{spec}-b{}-c{}", case.batch, case.config.channels);
            out.push(case);
        }
    }
    out
}
