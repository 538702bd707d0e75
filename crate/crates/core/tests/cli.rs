use std::path::PathBuf;
use std::process::{Command, Output};

use hamexpand::mc::read_samples_binary;
use serde_json::Value;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn hx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamexpand"))
        .args(args)
        .env_remove("HAMEXPAND_THREADS")
        .output()
        .unwrap()
}

fn run_config(command: &str, name: &str, extra: &[&str]) -> Output {
    let path = config(name);
    let mut args = vec![command, "--config", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    hx(&args)
}

fn ok_json(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn failure(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "{}", String::from_utf8_lossy(&out.stdout));
    let diag: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(diag["exit_code"], code);
    diag
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {v}"))
}

#[test]
fn catalog_commands() {
    let out = run_config("steinstein", "steinstein.json", &[]);
    let v = ok_json(&out);
    assert!(rel(num(&v, "c1"), 2.148_454_154_737_807_6) < 1e-12);
    assert!(rel(num(&v, "c2"), 0.346_040_103_943_011_94) < 1e-12);
    // bit-stable, with 17 significant digits
    assert_eq!(out.stdout, run_config("steinstein", "steinstein.json", &[]).stdout);
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"c1\":2.1484541547378075e0"));

    let v = ok_json(&run_config("blackscholes", "blackscholes.json", &[]));
    assert_eq!((num(&v, "c1"), num(&v, "c2")), (0.5, -0.5));
}

#[test]
fn expand_agrees_with_catalog_on_shipped_configs() {
    for (expand_cfg, catalog_cmd, catalog_cfg) in [
        ("expand_steinstein.json", "steinstein", "steinstein.json"),
        ("expand_steinstein_correlated.json", "steinstein", "steinstein_correlated.json"),
        ("expand_polynomial.json", "steinstein", "steinstein.json"),
        ("expand_blackscholes.json", "blackscholes", "blackscholes.json"),
    ] {
        let e = ok_json(&run_config("expand", expand_cfg, &[]));
        let c = ok_json(&run_config(catalog_cmd, catalog_cfg, &[]));
        for key in ["c1", "c2"] {
            assert!(rel(num(&e, key), num(&c, key)) < 1e-6, "{expand_cfg} {key}: {} vs {}", e[key], c[key]);
        }
    }
}

#[test]
fn overrides() {
    let v = ok_json(&run_config("expand", "expand_blackscholes.json", &["--set", "model.sigma=2"]));
    assert!(rel(num(&v, "c1"), 0.125) < 1e-8);
    let v = ok_json(&run_config("steinstein", "steinstein.json", &["--set", "sigma0=0", "--set", "T=1"]));
    assert!(num(&v, "c2").abs() < 1e-14);
    failure(&run_config("expand", "expand_blackscholes.json", &["--set", "model=3"]), 2);
    failure(&run_config("expand", "expand_blackscholes.json", &["--set", "nonsense"]), 2);
}

#[test]
fn curves_and_tables() {
    let out = run_config("tail", "tail_steinstein.json", &["--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("y,log_f_leading\n"));
    assert_eq!(text.lines().count(), 21);

    let v = ok_json(&run_config("tail", "tail_steinstein.json", &[]));
    assert_eq!(v["curve"].as_array().unwrap().len(), 20);
    assert_eq!(num(&v, "algebraic_exponent"), -0.5);

    let v = ok_json(&run_config("smile", "smile.json", &[]));
    assert!((num(&v, "beta1") - 2f64.sqrt() * (2f64.sqrt() - 1.0)).abs() < 1e-12);
    let out = run_config("smile", "smile_steinstein.json", &["--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("k,sigma2T_leading\n"));

    let v = ok_json(&run_config("shorttime", "shorttime_blackscholes.json", &[]));
    assert!((num(&v, "distance") - 0.5).abs() < 1e-8);

    let out = run_config("sweep", "sweep.json", &[]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 17);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",nonfocal")), "{text}");
}

#[test]
fn monte_carlo_output() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("y.bin");
    let set = format!("samples.path={}", bin.display());
    let args = ["--set", "mc.n_paths=40000", "--set", "mc.n_steps=50", "--set", &set];
    let a = ok_json(&run_config("mc", "mc_steinstein.json", &args));
    assert_eq!(a["n_paths"], 40000);
    assert!(num(&a["tail_slope"], "slope") < 0.0);
    let samples = read_samples_binary(std::fs::File::open(&bin).unwrap()).unwrap();
    assert_eq!(samples.len(), 40000);
    let first = std::fs::read(&bin).unwrap();
    let b = ok_json(&run_config("mc", "mc_steinstein.json", &args));
    assert_eq!(a, b);
    assert_eq!(first, std::fs::read(&bin).unwrap());
}

#[test]
fn output_file_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    let out = run_config("steinstein", "steinstein.json", &["--output", path.to_str().unwrap(), "--threads", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let stdout = run_config("steinstein", "steinstein.json", &[]).stdout;
    assert_eq!(std::fs::read(&path).unwrap(), stdout);

    failure(&run_config("steinstein", "steinstein.json", &["--threads", "0"]), 2);
    let cfg = config("steinstein.json");
    let with_env = |value: &str| {
        Command::new(env!("CARGO_BIN_EXE_hamexpand"))
            .args(["steinstein", "--config", cfg.to_str().unwrap()])
            .env("HAMEXPAND_THREADS", value)
            .output()
            .unwrap()
    };
    assert_eq!(with_env("1").stdout, stdout);
    failure(&with_env("many"), 2);
}

#[test]
fn exit_codes() {
    // unknown command and missing config
    assert_eq!(hx(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(failure(&hx(&["steinstein"]), 2)["error"], "config");

    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    };
    let bad_rho = write("rho.json", r#"{"a": 0, "b": 0, "c": 1, "sigma0": 0.2, "rho": 1.5, "T": 1}"#);
    assert_eq!(failure(&hx(&["steinstein", "--config", &bad_rho]), 2)["error"], "unsupported");
    let unknown = write("extra.json", r#"{"sigma": 1, "T": 1, "y0": 0, "colour": 1}"#);
    failure(&hx(&["blackscholes", "--config", &unknown]), 2);
    let syntax = write("broken.json", "{");
    failure(&hx(&["expand", "--config", &syntax]), 2);
    let exploding = write("smile.json", r#"{"B1": 1.5}"#);
    failure(&hx(&["smile", "--config", &exploding]), 2);

    // numerical failure: Black-Scholes does not scale with θ = 2
    let tail = write(
        "tail.json",
        r#"{"model": {"kind": "black_scholes", "sigma": 1, "y0": 0, "T": 1}, "theta": 2}"#,
    );
    let diag = failure(&hx(&["tail", "--config", &tail]), 3);
    assert_eq!(diag["error"], "scaling_violation");
    assert!(diag["message"].as_str().unwrap().len() > 10);
}
