use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsa-lab"))
        .args(args)
        .output()
        .expect("spawn rsa-lab")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_EQUIV: &str = r#"{"seed":4,"cases":[
  {"batch":2,"time":3,"height":5,"width":5,
   "rsa":{"channels":8,"queries":2,"latent":4,"groups":4,"window":"3x3x3"}},
  {"batch":1,"time":3,"height":4,"width":4,
   "rsa":{"channels":4,"queries":4,"latent":2,"groups":1,"window":"1x3x3"}}]}"#;

const TINY_DATA: &str = r#""data":{"seed":2,"per_class":6,"time":4,"height":8,"width":8}"#;

fn tiny_model(transform: &str) -> String {
    format!(r#""model":{{"transform":"{transform}","channels":4,"queries":2,"latent":2,"groups":2,"window":"3x3x3"}}"#)
}

fn probe_config(dir: &Path, transform: &str) -> String {
    let body = format!(
        r#"{{{TINY_DATA},{},"train":{{"epochs":2,"lr":0.05,"batch_size":4}}}}"#,
        tiny_model(transform)
    );
    write(dir, &format!("probe-{transform}.json"), &body)
}

#[test]
fn equiv_small_config_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "equiv.json", SMALL_EQUIV);
    let out = lab(&["equiv", "--config", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r["passed"], true);
    assert!(r["max_gap"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn equiv_f32_uses_relative_gap() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "equiv.json", SMALL_EQUIV);
    let out = lab(&["equiv", "--config", &cfg, "--dtype", "f32"]);
    assert_eq!(code(&out), 0);
    let r = report(&out);
    assert_eq!(r["relative"], true);
    assert!(r["max_gap"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn equiv_zero_tolerance_fails_check() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "equiv.json", SMALL_EQUIV);
    let out = lab(&["equiv", "--config", &cfg, "--tolerance", "0"]);
    assert_eq!(code(&out), 1);
    assert_eq!(report(&out)["passed"], false);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"seed":1,"tolerence":1e-9}"#);
    let out = lab(&["equiv", "--config", &cfg]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("tolerence"));
}

#[test]
fn bad_window_in_config_is_rejected() {
    let dir = TempDir::new().unwrap();
    let body = r#"{"cases":[{"batch":1,"time":3,"height":3,"width":3,
      "rsa":{"channels":4,"queries":2,"latent":2,"groups":1,"window":"2x3x3"}}]}"#;
    let cfg = write(dir.path(), "bad.json", body);
    assert_eq!(code(&lab(&["equiv", "--config", &cfg])), 2);
}

#[test]
fn missing_config_file_is_usage_error() {
    assert_eq!(code(&lab(&["equiv", "--config", "/nonexistent/x.json"])), 2);
}

#[test]
fn gradcheck_defaults_pass() {
    let out = lab(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(&out)["passed"], true);
}

#[test]
fn gradcheck_every_path_passes() {
    for path in ["reference", "fast", "multi-query"] {
        assert_eq!(code(&lab(&["gradcheck", "--path", path])), 0, "{path}");
    }
}

#[test]
fn gradcheck_eps_out_of_range() {
    assert_eq!(code(&lab(&["gradcheck", "--eps", "0.5"])), 2);
    assert_eq!(code(&lab(&["gradcheck", "--eps", "1e-9"])), 2);
}

#[test]
fn gradcheck_corrupted_gradient_fails() {
    let out = lab(&["gradcheck", "--corrupt-gradient"]);
    assert_eq!(code(&out), 1);
    assert_eq!(report(&out)["passed"], false);
}

#[test]
fn flops_reference_ratio_near_four() {
    let out = lab(&["flops", "--windows", "128,256,512", "--impls", "reference"]);
    assert_eq!(code(&out), 0);
    let r = report(&out);
    let ratios = r["ratios"].as_array().unwrap();
    assert_eq!(ratios.len(), 2);
    for ratio in ratios {
        let v = ratio["flops_ratio"].as_f64().unwrap();
        assert!((v - 4.0).abs() <= 0.4, "{v}");
    }
}

#[test]
fn flops_accepts_kernel_size_grid() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let out = lab(&[
        "flops",
        "--kernel-sizes",
        "3x3x3,3x5x5,3x7x7,3x9x9,5x7x7,5x9x9",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    let windows: Vec<u64> = r["config"]["windows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w.as_u64().unwrap())
        .collect();
    assert_eq!(windows, [27, 75, 147, 243, 245, 405]);
    let csv = fs::read_to_string(out_dir.join("flops.csv")).unwrap();
    assert!(csv.starts_with("impl,window,flops,leading_flops,params,workset\n"));
    assert!(out_dir.join("flops.json").exists());
}

#[test]
fn flops_empty_grid_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "empty.json", r#"{"windows":[]}"#);
    assert_eq!(code(&lab(&["flops", "--config", &cfg])), 2);
}

#[test]
fn bad_kernel_size_flag_is_rejected() {
    assert_eq!(code(&lab(&["flops", "--kernel-sizes", "3x4x3"])), 2);
    assert_eq!(code(&lab(&["flops", "--impls", "warp"])), 2);
}

#[test]
fn zero_threads_is_rejected() {
    assert_eq!(code(&lab(&["gradcheck", "--threads", "0"])), 2);
}

#[test]
fn bench_writes_csv() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("bench");
    let out = lab(&[
        "bench",
        "--kernel-sizes",
        "1x3x3,3x3x3",
        "--impls",
        "efficient,conv",
        "--channels",
        "16",
        "--interleave",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("k1x3x3-b1-c16,efficient,"));
    assert!(lines[2].starts_with("k3x3x3-b1-c16,efficient,"));
    assert!(lines[3].starts_with("k1x3x3-b1-c16,conv,"));
}

#[test]
fn bench_rejects_too_few_repeats() {
    assert_eq!(code(&lab(&["bench", "--repeats", "2"])), 2);
}

#[test]
fn probe_content_only_attention_is_order_blind() {
    let dir = TempDir::new().unwrap();
    let cfg = probe_config(dir.path(), "sa-content");
    let out = lab(&["probe", "--config", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert!(r["paired_gap"].as_f64().unwrap() <= 1e-6);
    assert!(r["test_acc"].as_f64().unwrap() <= 0.5);
}

#[test]
fn probe_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = probe_config(dir.path(), "rsa");
    let a = lab(&["probe", "--config", &cfg, "--seed", "7"]);
    let b = lab(&["probe", "--config", &cfg, "--seed", "7"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let c = lab(&["probe", "--config", &cfg, "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn probe_divergence_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = probe_config(dir.path(), "involution");
    let out = lab(&["probe", "--config", &cfg, "--lr", "1e300"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn dump_kernels_from_checkpoint() {
    let dir = TempDir::new().unwrap();
    let train_dir = dir.path().join("train");
    let cfg = probe_config(dir.path(), "rsa");
    let out = lab(&["probe", "--config", &cfg, "--out", train_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let checkpoint = train_dir.join("checkpoint.json");
    assert!(checkpoint.exists());

    let dump_cfg = write(
        dir.path(),
        "dump.json",
        &format!("{{{TINY_DATA},{}}}", tiny_model("rsa")),
    );
    let dump_dir = dir.path().join("dump");
    let out = lab(&[
        "dump-kernels",
        "--config",
        &dump_cfg,
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--position",
        "1,4,4",
        "--out",
        dump_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csvs = fs::read_dir(&dump_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 2 * 2 * 2);
    let basic = |clip: &str| fs::read_to_string(dump_dir.join(format!("{clip}_q0_basic.csv"))).unwrap();
    assert_eq!(basic("original"), basic("reversed"));
}

#[test]
fn dump_kernels_needs_out_dir() {
    assert_eq!(code(&lab(&["dump-kernels"])), 2);
}

#[test]
fn dump_kernels_position_must_have_three_coordinates() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("d");
    let out = lab(&["dump-kernels", "--position", "1,2", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}
