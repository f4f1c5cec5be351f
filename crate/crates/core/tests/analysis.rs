mod common;

use std::sync::{Mutex, MutexGuard};

use common::{rsa_config, spec};
use proptest::prelude::*;
use rsa_core::analysis::*;
use rsa_core::tensor::NeighborhoodSpec;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn dims(m: usize) -> Dims {
    Dims {
        batch: 2,
        time: 4,
        height: 8,
        width: 8,
        channels: 64,
        queries: 8,
        latent: 8,
        groups: 1,
        window: m,
        normalize: true,
    }
}

fn ratio(imp: Impl, f: impl Fn(&mut Dims), g: impl Fn(&mut Dims), leading: bool) -> f64 {
    let (mut a, mut b) = (dims(128), dims(128));
    f(&mut a);
    g(&mut b);
    let (ra, rb) = (cost_report(&a, imp).unwrap(), cost_report(&b, imp).unwrap());
    if leading {
        rb.leading_flops as f64 / ra.leading_flops as f64
    } else {
        rb.flops as f64 / ra.flops as f64
    }
}

fn case(imp: Impl, batch: usize, window: NeighborhoodSpec) -> BenchCase {
    BenchCase {
        id: format!("b{batch}-{window}"),
        imp,
        batch,
        time: 4,
        height: 8,
        width: 8,
        config: rsa_config(64, 8, 8, 1, window, true),
    }
}

fn opts() -> BenchOptions {
    BenchOptions {
        threads: Some(1),
        interleave: true,
        ..BenchOptions::default()
    }
}

#[test]
fn reference_flops_quadratic_in_window() {
    let _g = serial();
    for m in [128, 256, 512] {
        let r = ratio(Impl::Reference, |d| d.window = m, |d| d.window = 2 * m, false);
        assert!((r - 4.0).abs() <= 0.4, "M={m}: {r}");
    }
}

#[test]
fn efficient_flops_linear_in_window() {
    let _g = serial();
    for m in [128, 256, 512] {
        let r = ratio(Impl::Efficient, |d| d.window = m, |d| d.window = 2 * m, false);
        assert!((r - 2.0).abs() <= 0.2, "M={m}: {r}");
    }
    for m in [256, 512, 1024] {
        let r = ratio(Impl::MultiQuery, |d| d.window = m, |d| d.window = 2 * m, false);
        assert!((r - 2.0).abs() <= 0.2, "M={m}: {r}");
        let r = ratio(Impl::MultiQuery, |d| d.window = m, |d| d.window = 2 * m, true);
        assert!((r - 2.0).abs() <= 1e-12);
    }
}

#[test]
fn multi_query_leading_term_scales_with_inverse_square_of_queries() {
    let _g = serial();
    let r = ratio(
        Impl::MultiQuery,
        |d| {
            d.queries = 1;
            d.latent = 64;
        },
        |d| {
            d.queries = 8;
            d.latent = 8;
        },
        true,
    );
    assert!((r - 1.0 / 64.0).abs() <= 0.15 / 64.0, "{r}");
}

#[test]
fn efficient_workset_has_no_quadratic_window_term() {
    let _g = serial();
    for imp in [Impl::Efficient, Impl::MultiQuery] {
        let w = |m| cost_report(&dims(m), imp).unwrap().workset as i128;
        assert_eq!(w(300) - 2 * w(200) + w(100), 0, "{imp}");
    }
    let w = |m| cost_report(&dims(m), Impl::Reference).unwrap().workset as i128;
    assert!(w(300) - 2 * w(200) + w(100) > 0);
}

#[test]
fn invalid_dims_are_rejected() {
    let _g = serial();
    let mut d = dims(27);
    d.queries = 3;
    assert!(cost_report(&d, Impl::Reference).is_err());
    d = dims(27);
    d.groups = 3;
    assert!(cost_report(&d, Impl::Efficient).is_err());
    d = dims(0);
    assert!(cost_report(&d, Impl::Conv).is_err());
}

#[test]
fn sweep_matches_individual_reports() {
    let _g = serial();
    let cases: Vec<(Dims, Impl)> = Impl::ALL.iter().map(|&i| (dims(27), i)).collect();
    for ((d, i), r) in cases.iter().zip(cost_sweep(&cases)) {
        assert_eq!(r.unwrap(), cost_report(d, *i).unwrap());
    }
}

#[test]
fn impl_names_round_trip() {
    let _g = serial();
    for imp in Impl::ALL {
        assert_eq!(imp.name().parse::<Impl>().unwrap(), imp);
    }
    assert!("quadratic".parse::<Impl>().is_err());
}

#[test]
fn inputs_repeat_per_seed_and_are_shared_across_impls() {
    let _g = serial();
    let s = spec(3, 3, 3);
    let a = bench_input::<f64>(&case(Impl::Reference, 1, s), 5).unwrap();
    let b = bench_input::<f64>(&case(Impl::Conv, 1, s), 5).unwrap();
    let c = bench_input::<f64>(&case(Impl::Reference, 1, s), 6).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
}

#[test]
fn option_and_grid_errors() {
    let _g = serial();
    let cases = vec![case(Impl::Conv, 1, spec(1, 1, 1))];
    assert!(bench_run(&cases, &BenchOptions { repeats: 4, ..opts() }).is_err());
    assert!(bench_run(&cases, &BenchOptions { warmup: 1, ..opts() }).is_err());
    assert!(bench_run(&[], &opts()).is_err());
}

#[test]
fn oversized_and_invalid_cases_are_skipped() {
    let _g = serial();
    let mut bad = case(Impl::Reference, 1, spec(1, 1, 1));
    bad.config.queries = 3;
    bad.id = "bad".into();
    let big = case(Impl::Reference, 1, spec(5, 7, 7));
    let ok = case(Impl::Involution, 1, spec(1, 1, 1));
    let out = bench_run(
        &[bad, big, ok.clone()],
        &BenchOptions {
            max_workset: 1 << 20,
            ..opts()
        },
    )
    .unwrap();
    assert_eq!(out.results.len(), 1);
    assert_eq!(out.skipped.len(), 2);
    assert!(out.find(&ok.id, Impl::Involution).is_some());
    let r = &out.results[0];
    assert_eq!(r.repeats, 5);
    assert!(r.median_ns > 0.0 && r.mad_ns >= 0.0);
}

#[test]
fn csv_has_fixed_header_and_one_row_per_result() {
    let _g = serial();
    let cases = kernel_grid(
        &[Impl::Conv, Impl::Lambda],
        &[spec(1, 1, 1), spec(3, 1, 1)],
        &case(Impl::Conv, 1, spec(1, 1, 1)),
    );
    assert_eq!(cases.len(), 4);
    let out = bench_run(&cases, &opts()).unwrap();
    let mut buf = Vec::new();
    write_csv(&out.results, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "config_id,impl,median_ns,mad_ns,repeats,dtype,flops,params,workset"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("k1x1x1-b1-c64,conv,"));
    assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 9));
}

#[test]
fn efficient_beats_reference_at_medium_window() {
    let _g = serial();
    let s = spec(3, 7, 7);
    let cases: Vec<BenchCase> = [Impl::Reference, Impl::Efficient, Impl::MultiQuery]
        .iter()
        .map(|&i| case(i, 1, s))
        .collect();
    let out = bench_run(&cases, &opts()).unwrap();
    let t = |i| out.find(&cases[0].id, i).unwrap().median_ns;
    assert!(
        t(Impl::Efficient) < t(Impl::Reference),
        "{} vs {}",
        t(Impl::Efficient),
        t(Impl::Reference)
    );
    assert!(t(Impl::MultiQuery) < t(Impl::Reference));
}

#[test]
fn doubling_batch_roughly_doubles_time() {
    let _g = serial();
    let s = spec(3, 3, 3);
    let cases = [case(Impl::MultiQuery, 1, s), case(Impl::MultiQuery, 2, s)];
    let out = bench_run(&cases, &BenchOptions { repeats: 7, ..opts() }).unwrap();
    let r = out.results[1].median_ns / out.results[0].median_ns;
    assert!((1.6..=2.6).contains(&r), "{r}");
}

#[test]
fn robust_statistics() {
    let _g = serial();
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]), 1.0);
    assert_eq!(ranks(&[10.0, 30.0, 20.0, 20.0]), vec![1.0, 4.0, 2.5, 2.5]);
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
}

fn any_dims() -> impl Strategy<Value = Dims> {
    (
        1usize..4,
        1usize..5,
        1usize..6,
        1usize..6,
        1usize..4,
        0usize..3,
        1usize..5,
        1usize..60,
        any::<bool>(),
    )
        .prop_map(|(b, t, h, w, cq, lpow, d, m, normalize)| {
            let l = 1 << lpow;
            Dims {
                batch: b,
                time: t,
                height: h,
                width: w,
                channels: cq * l,
                queries: l,
                latent: d,
                groups: 1,
                window: m,
                normalize,
            }
        })
}

proptest! {
    #[test]
    fn counters_monotone_in_every_dimension(d in any_dims(), which in 0usize..5) {
        let _g = serial();
        let mut bigger = d;
        match which {
            0 => bigger.batch += 1,
            1 => bigger.time += 1,
            2 => bigger.height += 1,
            3 => bigger.window += 1,
            _ => bigger.channels += bigger.queries,
        }
        for imp in Impl::ALL {
            let (a, b) = (cost_report(&d, imp).unwrap(), cost_report(&bigger, imp).unwrap());
            prop_assert!(b.flops >= a.flops && b.params >= a.params && b.workset >= a.workset, "{imp} {which}");
            prop_assert!(a.leading_flops <= a.flops);
        }
    }
}
