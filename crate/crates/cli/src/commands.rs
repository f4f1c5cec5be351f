use std::fs;
use std::path::Path;

use rsa_core::analysis::{bench_run, cost_report, write_csv, BenchCase, BenchOptions, CostReport, Dtype, Impl};
use rsa_core::grad::{rsa_gradcheck, CheckOptions};
use rsa_core::probe::{dump_kernels, gen_dataset, load, train, ProbeModel};
use rsa_core::rsa::{multi_query_forward, rsa_forward_fast, rsa_forward_reference, RsaParams};
use rsa_core::tensor::{derive_seed, seeded, FeatureMap, GridShape};
use rsa_core::Real;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BenchConfig, DumpConfig, EquivCase, EquivConfig, FlopsConfig, GradcheckConfig, ProbeRunConfig};
use crate::error::{CliError, Result};

/// A command's JSON report and whether its check passed.
pub struct Outcome {
    pub report: Value,
    pub passed: bool,
}

impl Outcome {
    fn pass(report: Value) -> Self {
        Outcome { report, passed: true }
    }
}

#[derive(Serialize)]
struct EquivRow<'a> {
    index: usize,
    case: &'a EquivCase,
    fast_gap: f64,
    multi_query_gap: f64,
}

fn gaps<T: Real>(case: &EquivCase, seed: u64, index: usize) -> Result<(f64, f64, f64)> {
    let grid = GridShape::new(case.batch, case.time, case.height, case.width, case.rsa.channels);
    let p = RsaParams::<f64>::random(case.rsa, derive_seed(seed, index as u64))?.cast::<T>();
    let x = FeatureMap::<T>::random_normal(grid, 1.0, &mut seeded(derive_seed(seed, 1000 + index as u64)))?;
    let r = rsa_forward_reference(&x, &p)?;
    let scale = r
        .data()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.to_f64().unwrap_or(f64::NAN).abs()));
    let gap = |y: FeatureMap<T>| y.max_abs_diff(&r).map(|d| d.to_f64().unwrap_or(f64::NAN));
    Ok((
        gap(rsa_forward_fast(&x, &p)?)?,
        gap(multi_query_forward(&x, &p)?)?,
        scale,
    ))
}

pub fn equiv(cfg: &EquivConfig) -> Result<Outcome> {
    if cfg.cases.is_empty() {
        return Err(CliError::Usage("equiv: no cases".into()));
    }
    let relative = cfg.dtype == Dtype::F32;
    let tolerance = cfg.tolerance.unwrap_or(if relative { 1e-4 } else { 1e-10 });
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(CliError::Usage(format!(
            "equiv: tolerance {tolerance} must be non-negative"
        )));
    }
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, case) in cfg.cases.iter().enumerate() {
        let (fast, multi, scale) = match cfg.dtype {
            Dtype::F32 => gaps::<f32>(case, cfg.seed, i)?,
            Dtype::F64 => gaps::<f64>(case, cfg.seed, i)?,
        };
        let norm = if relative { scale.max(f64::MIN_POSITIVE) } else { 1.0 };
        let row = EquivRow {
            index: i,
            case,
            fast_gap: fast / norm,
            multi_query_gap: multi / norm,
        };
        worst = worst.max(row.fast_gap).max(row.multi_query_gap);
        rows.push(row);
    }
    let passed = worst <= tolerance;
    let report = json!({
        "command": "equiv",
        "config": cfg,
        "tolerance": tolerance,
        "relative": relative,
        "max_gap": worst,
        "passed": passed,
        "cases": rows,
    });
    Ok(Outcome { report, passed })
}

pub fn gradcheck(cfg: &GradcheckConfig, dtype: Dtype) -> Result<Outcome> {
    if dtype != Dtype::F64 {
        return Err(CliError::Usage("gradcheck runs in f64 only".into()));
    }
    let opts = CheckOptions {
        eps: cfg.eps,
        coords_per_tensor: cfg.coords_per_tensor,
        seed: cfg.case.seed,
    };
    let report = rsa_gradcheck(&cfg.case, cfg.path, &opts, cfg.corrupt)?;
    let passed = report.passed(cfg.tolerance);
    let report = json!({
        "command": "gradcheck",
        "config": cfg,
        "max_rel_err": report.max_rel_err(),
        "passed": passed,
        "report": report,
    });
    Ok(Outcome { report, passed })
}

#[derive(Serialize)]
struct FlopsRow {
    #[serde(rename = "impl")]
    imp: Impl,
    window: usize,
    #[serde(flatten)]
    cost: CostReport,
}

pub const FLOPS_CSV_HEADER: &str = "impl,window,flops,leading_flops,params,workset";

pub fn flops(cfg: &FlopsConfig, out: Option<&Path>) -> Result<Outcome> {
    if cfg.windows.is_empty() || cfg.impls.is_empty() {
        return Err(CliError::Usage("flops: empty grid".into()));
    }
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &imp in &cfg.impls {
        let mut prev: Option<(usize, u64)> = None;
        for &window in &cfg.windows {
            let dims = rsa_core::analysis::Dims { window, ..cfg.dims };
            let cost = cost_report(&dims, imp)?;
            if let Some((from, f)) = prev {
                ratios.push(
                    json!({ "impl": imp, "from": from, "to": window, "flops_ratio": cost.flops as f64 / f as f64 }),
                );
            }
            prev = Some((window, cost.flops));
            rows.push(FlopsRow { imp, window, cost });
        }
    }
    if let Some(dir) = out {
        let mut csv = format!("{FLOPS_CSV_HEADER}\n");
        for r in &rows {
            let c = r.cost;
            csv += &format!(
                "{},{},{},{},{},{}\n",
                r.imp, r.window, c.flops, c.leading_flops, c.params, c.workset
            );
        }
        fs::write(dir.join("flops.csv"), csv)?;
    }
    Ok(Outcome::pass(
        json!({ "command": "flops", "config": cfg, "rows": rows, "ratios": ratios }),
    ))
}

pub fn bench(cfg: &BenchConfig, out: Option<&Path>) -> Result<Outcome> {
    if cfg.kernel_sizes.is_empty() || cfg.impls.is_empty() {
        return Err(CliError::Usage("bench: empty grid".into()));
    }
    let base = BenchCase {
        id: String::new(),
        imp: cfg.impls[0],
        batch: cfg.batch,
        time: cfg.time,
        height: cfg.height,
        width: cfg.width,
        config: cfg.rsa,
    };
    let cases = rsa_core::analysis::kernel_grid(&cfg.impls, &cfg.kernel_sizes, &base);
    let opts = BenchOptions {
        repeats: cfg.repeats,
        warmup: cfg.warmup,
        seed: cfg.seed,
        dtype: cfg.dtype,
        threads: cfg.threads,
        max_workset: cfg.max_workset,
        interleave: cfg.interleave,
    };
    let result = bench_run(&cases, &opts)?;
    if let Some(dir) = out {
        write_csv(&result.results, fs::File::create(dir.join("bench.csv"))?)?;
    }
    Ok(Outcome::pass(json!({
        "command": "bench",
        "config": cfg,
        "results": result.results,
        "skipped": result.skipped,
    })))
}

pub fn probe(cfg: &ProbeRunConfig, dtype: Dtype, out: Option<&Path>) -> Result<Outcome> {
    if dtype != Dtype::F64 {
        return Err(CliError::Usage("probe trains in f64 only".into()));
    }
    let data = gen_dataset(&cfg.data)?;
    let mut options = cfg.train.clone();
    options.checkpoint = out.map(|d| d.join("checkpoint.json"));
    let (_, report) = train(cfg.model, &data, &options)?;
    let last = report.final_metrics().copied();
    Ok(Outcome::pass(json!({
        "command": "probe",
        "config": cfg,
        "train_acc": last.map(|m| m.train_acc),
        "test_acc": last.map(|m| m.test_acc),
        "paired_gap": report.paired.max_gap,
        "paired_min_gap": report.paired.min_gap,
        "paired_fraction_above_1e-3": report.paired.fraction_above(1e-3),
        "checkpoint": options.checkpoint,
        "report": report,
    })))
}

pub fn dump(cfg: &DumpConfig, dtype: Dtype, out: Option<&Path>) -> Result<Outcome> {
    if dtype != Dtype::F64 {
        return Err(CliError::Usage("dump-kernels runs in f64 only".into()));
    }
    let out = out.ok_or_else(|| CliError::Usage("dump-kernels needs --out DIR".into()))?;
    let model = match &cfg.checkpoint {
        Some(path) => load(path)?,
        None => ProbeModel::new(cfg.model, cfg.seed)?,
    };
    let data = gen_dataset(&cfg.data)?;
    let clip = data
        .test
        .get(cfg.clip)
        .ok_or_else(|| CliError::Usage(format!("clip {} outside the {} test clips", cfg.clip, data.test.len())))?;
    let s = clip.data.shape();
    let position = cfg.position.unwrap_or([s.time / 2, s.height / 2, s.width / 2]);
    let dumped = dump_kernels(&model, &clip.data, position, out)?;
    Ok(Outcome::pass(json!({
        "command": "dump-kernels",
        "config": cfg,
        "model": model.config,
        "label": clip.label,
        "position": position,
        "kernels": dumped,
    })))
}
