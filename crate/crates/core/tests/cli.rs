use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SCALAR: &str = r#"{
    "system": {"A": 1.2, "C": 0.7, "Q": 0.8, "R": 0.8},
    "channel": {"lambda": 0.5},
    "energy": {"delta_high": "8", "delta_low": "1", "psi": "2"},
    "detector": {"z0": 2, "L": 4},
    "attacker": {"beta": "1/5"},
    "sim": {"horizon": 2000, "runs": 8, "seed": 42}
}"#;

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn acksiege(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acksiege"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("ACKSIEGE_THREADS", "2")
        .output()
        .unwrap()
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn simulate_is_deterministic_and_sized() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "scalar.json", SCALAR);
    let a = acksiege(&["simulate", "--runs", "1", "--horizon", "10"], &cfg);
    let b = acksiege(&["simulate", "--runs", "1", "--horizon", "10"], &cfg);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stderr, b.stderr);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("# acksiege "));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 10);
    assert!(rows[9].starts_with("10,"));
}

#[test]
fn simulate_writes_csv_and_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "scalar.json", SCALAR);
    let out = dir.path().join("run.csv");
    let o = acksiege(&["simulate", "--out", out.to_str().unwrap(), "--seed", "7"], &cfg);
    assert!(o.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(summary["per_run_seeds"].as_array().unwrap().len(), 8);
    assert_eq!(summary["total_steps"], 16000);
    let csv = std::fs::read_to_string(&out).unwrap();
    let last: f64 = data_rows(&csv)
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(last, summary["j_final"].as_f64().unwrap());
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "scalar.json", SCALAR);
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_acksiege"))
            .args(["simulate", "--runs", "40", "--config"])
            .arg(&cfg)
            .env("ACKSIEGE_THREADS", threads)
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(acksiege(&["analyze"], &missing).status.code(), Some(4));

    let bad_budget = write_config(&dir, "budget.json", &SCALAR.replace(r#""psi": "2""#, r#""psi": "1""#));
    assert_eq!(acksiege(&["analyze"], &bad_budget).status.code(), Some(2));

    let unknown = write_config(&dir, "unknown.json", &SCALAR.replace(r#""lambda""#, r#""lamda""#));
    let o = acksiege(&["analyze"], &unknown);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));

    let cfg = write_config(&dir, "scalar.json", SCALAR);
    assert_eq!(acksiege(&["simulate", "--runs", "0"], &cfg).status.code(), Some(2));
    assert_eq!(acksiege(&["simulate", "--bogus"], &cfg).status.code(), Some(2));

    // The all-blocked bound is only an error when the attacker actually needs it.
    let unstable = SCALAR.replace(r#""A": 1.2"#, r#""A": 2.5"#);
    let partial = write_config(&dir, "partial.json", &unstable);
    let o = acksiege(&["analyze"], &partial);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"j_max\": null"));
    let full = write_config(&dir, "full.json", &unstable.replace(r#""1/5""#, r#""1""#));
    assert_eq!(acksiege(&["analyze"], &full).status.code(), Some(3));

    let o = acksiege(
        &[
            "analyze",
            "--out",
            dir.path().join("no/such/dir/a.json").to_str().unwrap(),
        ],
        &cfg,
    );
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn analyze_recommends_online_without_attacker() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "b0.json", &SCALAR.replace(r#""1/5""#, r#""0""#));
    let out = dir.path().join("a.json");
    assert!(acksiege(&["analyze", "--out", out.to_str().unwrap()], &cfg)
        .status
        .success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["recommendation"], "online");
    assert_eq!(v["offline_schedule"], "1000000");
    let table = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert!(table.contains("r,t,beta,J_chain,J_offline,J_online,recommendation"));

    let cfg = write_config(&dir, "b23.json", &SCALAR.replace(r#""1/5""#, r#""2/3""#));
    let o = acksiege(&["analyze"], &cfg);
    let v: serde_json::Value = serde_json::from_str(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    assert_eq!(v["recommendation"], "offline");
}

#[test]
fn threshold_table_switches_once_past_the_bracket() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "scalar.json", SCALAR);
    let o = acksiege(&["threshold", "--t-max", "6"], &cfg);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let recs: Vec<&str> = data_rows(&text).iter().map(|r| r.rsplit(',').next().unwrap()).collect();
    assert!(!recs.is_empty());
    assert_eq!(recs.first(), Some(&"online"));
    assert_eq!(recs.last(), Some(&"offline"));
}

#[test]
fn fig4_final_ordering() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "scalar.json", SCALAR);
    let o = acksiege(&["fig4", "--runs", "20", "--horizon", "20000"], &cfg);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let last: Vec<f64> = data_rows(&text)
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let (off, on, a15, a23) = (last[1], last[2], last[3], last[4]);
    assert!(on < a15 && a15 < off && off < a23, "{last:?}");
}

#[test]
fn fig5_has_chain_mc_and_bound_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "scalar.json", SCALAR);
    let o = acksiege(&["fig5", "--runs", "4", "--horizon", "2000", "--t-max", "5"], &cfg);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let rows = data_rows(&text);
    for source in ["chain,", "j_max,", "monte_carlo,"] {
        assert!(rows.iter().any(|r| r.starts_with(source)), "no {source} row");
    }
    assert_eq!(rows.iter().filter(|r| r.starts_with("monte_carlo,")).count(), 5);
}
