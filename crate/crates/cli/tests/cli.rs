use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbo-lab"))
        .args(args)
        .output()
        .expect("spawn cbo-lab")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == name)
        .unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn deterministic_v_is_geometric() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lab(&["simulate", "--mode", "deterministic", "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    let v = column(&dir.path().join("trajectory.csv"), "v");
    assert_eq!(v.len(), 101);
    for w in v.windows(2) {
        assert!((w[1] / w[0] - 0.9025).abs() < 1e-12);
    }
}

#[test]
fn zero_steps_is_usage_error() {
    assert_eq!(lab(&["simulate", "--steps", "0"]).status.code(), Some(2));
    assert_eq!(lab(&["simulate", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(lab(&["simulate", "--dt", "-1"]).status.code(), Some(2));
}

#[test]
fn defaults_are_the_base_setting() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lab(&["simulate", "--snapshot-every", "33", "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    let m = json(&out);
    let model = &m["config"]["simulate"]["model"];
    assert_eq!(model["objective"], "rastrigin");
    assert_eq!(model["n"], 100);
    assert_eq!(model["dim"], 2);
    assert_eq!(model["lambda"], 1.0);
    assert_eq!(model["sigma"], 1.0);
    assert_eq!(model["alpha"], 1000.0);
    assert_eq!(model["dt"], 0.05);
    assert_eq!(model["mode"], "anisotropic");
    assert_eq!(model["seed"], 42);
    assert_eq!(model["init"], serde_json::json!([-5.0, 5.0]));

    let traj = dir.path().join("trajectory.csv");
    assert_eq!(
        header(&traj),
        "step,time,v,e_norm,best_f,consensus_0,consensus_1"
    );
    let t = column(&traj, "time");
    assert!((t[99] - 4.95).abs() < 1e-12);
    let snaps = dir.path().join("snapshots.csv");
    assert_eq!(header(&snaps), "step,agent,coord_0,coord_1");
    let steps = column(&snaps, "step");
    assert_eq!(steps.len(), 4 * 100);

    let outputs: Vec<String> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_str().unwrap().to_string())
        .collect();
    for name in ["trajectory.csv", "snapshots.csv", "manifest.json"] {
        assert!(
            outputs.iter().any(|p| p.ends_with(name)),
            "{name} not listed"
        );
    }
}

#[test]
fn sigma_sq_is_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lab(&["simulate", "--sigma-sq", "2.1", "--steps", "5", "--out", d]);
    let model = &json(&out)["config"]["simulate"]["model"];
    assert_eq!(model["sigma"].as_f64().unwrap(), 2.1f64.sqrt());
    assert!(model["sigma_sq"].is_null());
    assert_eq!(
        lab(&["simulate", "--sigma", "1", "--sigma-sq", "1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn deterministic_mc_has_zero_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lab(&["mc", "--mode", "deterministic", "--runs", "5", "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    let path = dir.path().join("mc_mean.csv");
    assert_eq!(header(&path), "step,time,mean_v,stderr_v");
    assert!(column(&path, "stderr_v").iter().all(|&s| s == 0.0));
}

#[test]
fn violating_regime_rises_early() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lab(&["mc", "--sigma", "1.44914", "--runs", "1000", "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!json(&out)["warnings"].as_array().unwrap().is_empty());
    let v = column(&dir.path().join("mc_mean.csv"), "mean_v");
    assert!(v[10] > v[0], "{} vs {}", v[10], v[0]);
}

#[test]
fn sweep_grids() {
    for (param, from, to, step, count) in [
        ("alpha", "1", "1001", "20", 51),
        ("n", "10", "1010", "20", 51),
        ("dim", "1", "201", "10", 21),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let out = lab(&[
            "sweep",
            "--param",
            param,
            "--from",
            from,
            "--to",
            to,
            "--step",
            step,
            "--mode",
            "deterministic",
            "--runs",
            "1",
            "--steps",
            "1",
            "--n",
            "4",
            "--out",
            d,
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let m = json(&out);
        assert_eq!(m["summary"]["grid"].as_array().unwrap().len(), count);
        let path = dir.path().join("sweep.csv");
        assert_eq!(header(&path), "param_value,step,time,mean_v");
        assert_eq!(column(&path, "step").len(), count * 2);
    }
    let empty = lab(&[
        "sweep", "--param", "n", "--from", "5", "--to", "1", "--step", "1",
    ]);
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn rates_reports() {
    let r = json(&lab(&[
        "rates", "--lambda", "1", "--sigma", "1", "--dt", "0.05", "--dim", "2",
    ]));
    assert_eq!(r["ms_rate"], 1.0);
    assert_eq!(r["as_rate"], 1.5);
    assert!((r["em_ms_rate"].as_f64().unwrap() - 0.95).abs() < 1e-15);

    let r = json(&lab(&["rates", "--lambda", "1", "--sigma", "1.44914"]));
    assert_eq!(r["ms_condition_ok"], false);

    let r = json(&lab(&[
        "rates",
        "--lambda",
        "-0.1",
        "--sigma",
        "1",
        "--dt",
        "0.01",
        "--mc-samples",
        "1000000",
    ]));
    let est = &r["as_rate_mc"];
    assert!(est["estimate"].as_f64().unwrap() > 3.0 * est["std_error"].as_f64().unwrap());
}

#[test]
fn spectral_verification() {
    let ok = lab(&[
        "verify-spectral",
        "--n",
        "50",
        "--trials",
        "100",
        "--tol",
        "1e-10",
    ]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&ok)["pass"], true);
    assert_eq!(lab(&["verify-spectral", "--n", "1"]).status.code(), Some(0));
    let broken = lab(&["verify-spectral", "--n", "10", "--self-test-broken"]);
    assert_eq!(broken.status.code(), Some(1));
    let report = json(&broken);
    assert_eq!(report["pass"], false);
    assert_eq!(report["row_sum_failures"], 100);
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = lab(&[
        "mc",
        "--runs",
        "20",
        "--sigma-sq",
        "0.5",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let manifest = a.join("manifest.json");
    let rep = lab(&[
        "replay",
        manifest.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(rep.status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.join("mc_mean.csv")).unwrap(),
        std::fs::read(b.join("mc_mean.csv")).unwrap()
    );
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let d = dir.path().join(threads);
        let out = Command::new(env!("CARGO_BIN_EXE_cbo-lab"))
            .args(["mc", "--runs", "64", "--out", d.to_str().unwrap()])
            .env(cbo_cli::THREADS_ENV, threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        files.push(std::fs::read(d.join("mc_mean.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}
