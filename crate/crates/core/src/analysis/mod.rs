//! Exact cost counters for every transform and a timing harness that runs
//! them on identical inputs.

mod bench;
mod cost;
mod stats;

pub use bench::{
    bench_input, bench_run, kernel_grid, write_csv, BenchCase, BenchOptions, BenchOutput, BenchResult, BenchSkip,
    Dtype, CSV_HEADER,
};
pub use cost::{cost_report, cost_sweep, CostReport, Dims, Impl};
pub use stats::{mad, median, ranks, spearman};
