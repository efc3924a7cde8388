use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn example1() -> PathBuf {
    configs().join("example1.json")
}

fn rasp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rasp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rasp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn num(v: &Value, ptr: &str) -> f64 {
    v.pointer(ptr)
        .and_then(Value::as_f64)
        .unwrap_or_else(|| panic!("{ptr} missing in {v}"))
}

/// Example-1 config with some cost fields replaced.
fn variant(dir: &TempDir, name: &str, edits: &[(&str, f64)]) -> PathBuf {
    let mut cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(example1()).unwrap()).unwrap();
    for (key, v) in edits {
        cfg["costs"][*key] = (*v).into();
    }
    let path = dir.path().join(name);
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn counts(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, format!("interval,cause_1,cause_2\n{body}")).unwrap();
    path
}

#[test]
fn design_then_evaluate_round_trip() {
    let dir = TempDir::new().unwrap();
    let design = dir.path().join("design.json");
    let again = dir.path().join("evaluate.json");
    let cfg = example1();
    let cfg = cfg.to_str().unwrap();
    ok(&[
        "design",
        "--config",
        cfg,
        "--decision",
        "reliability",
        "--out",
        design.to_str().unwrap(),
    ]);
    let d = json(&design);
    assert_eq!(d["plan"]["n"], 4);
    assert_eq!(d["plan"]["epochs"].as_array().unwrap().len(), 3);
    assert!((num(&d, "/interval_length") - 0.30).abs() < 1e-12);
    assert!((num(&d, "/rule/r0") - 0.76).abs() < 1e-12);
    assert!((num(&d, "/risk/total_risk") - 33.90826).abs() < 1e-3);
    assert!((num(&d, "/risk/p_accept") - 0.489).abs() < 1e-3);

    ok(&[
        "evaluate",
        "--config",
        cfg,
        "--from",
        design.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    let e = json(&again);
    assert!((num(&d, "/risk/total_risk") - num(&e, "/risk/total_risk")).abs() < 1e-9);
    assert_eq!(d["rule"], e["rule"]);
}

#[test]
fn approximate_round_trip() {
    let dir = TempDir::new().unwrap();
    let mut cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(configs().join("example2.json")).unwrap())
            .unwrap();
    cfg["search"] =
        serde_json::json!({ "h_grid": 0.02, "k_cap": 2, "n_cap": 12, "mc_draws": 4000, "seed": 9 });
    let cfg_path = dir.path().join("small.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let design = dir.path().join("design.json");
    let again = dir.path().join("evaluate.json");
    ok(&[
        "design",
        "--config",
        cfg,
        "--decision",
        "approx",
        "--out",
        design.to_str().unwrap(),
    ]);
    ok(&[
        "evaluate",
        "--config",
        cfg,
        "--from",
        design.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    let (d, e) = (json(&design), json(&again));
    assert_eq!(d["decision"], "approx");
    assert_eq!(d["monte_carlo"]["seed"], 9);
    assert!((num(&d, "/risk/total_risk") - num(&e, "/risk/total_risk")).abs() < 1e-9);
}

#[test]
fn cheap_rejection_means_no_test() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(&dir, "cr20.json", &[("c_reject", 20.0)]);
    let out = dir.path().join("r.json");
    let text = ok(&[
        "design",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(text.contains("reject without testing"), "{text}");
    let r = json(&out);
    assert_eq!(r["plan"]["n"], 0);
    assert_eq!(num(&r, "/risk/total_risk"), 20.0);
}

#[test]
fn evaluate_reference_plans() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(&dir, "ct.json", &[("c_time", 0.5)]);
    let out = dir.path().join("r.json");
    let cfg = cfg.to_str().unwrap();
    let base = ["evaluate", "--config", cfg, "--out", out.to_str().unwrap()];
    ok(&[
        &base[..],
        &[
            "--decision",
            "reliability",
            "--n",
            "5",
            "--h",
            "0.29",
            "--k",
            "2",
            "--r0",
            "0.76",
        ],
    ]
    .concat());
    assert!((num(&json(&out), "/risk/total_risk") - 34.04424).abs() < 1e-3);

    ok(&[&base[..], &["--n", "5", "--epochs", "0.29,0.58"]].concat());
    assert!((num(&json(&out), "/risk/total_risk") - 34.04424).abs() < 1e-3);

    ok(&[&base[..], &["--n", "0"]].concat());
    assert_eq!(num(&json(&out), "/risk/total_risk"), 40.0);
    let lenient = variant(&dir, "cr90.json", &[("c_reject", 90.0)]);
    ok(&[
        "evaluate",
        "--config",
        lenient.to_str().unwrap(),
        "--n",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    let r = json(&out);
    assert!((num(&r, "/risk/total_risk") - 47.6619).abs() < 1e-3);
    assert_eq!(num(&r, "/risk/p_accept"), 1.0);
}

#[test]
fn negative_rate_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(example1())
        .unwrap()
        .replace("\"eta\": 1.0", "\"eta\": -1.0");
    let path = dir.path().join("bad.json");
    std::fs::write(&path, text).unwrap();
    let out = rasp(&["design", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("eta") && err.contains("line"), "{err}");
}

#[test]
fn decisions_on_observed_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = example1();
    let plan = ["--n", "4", "--h", "0.3", "--k", "3"];
    let decide = |data: &Path, rule: &str| -> Value {
        let out = dir.path().join("d.json");
        let args = [
            "decide",
            "--config",
            cfg.to_str().unwrap(),
            "--decision",
            rule,
            "--data",
            data.to_str().unwrap(),
        ];
        ok(&[&args[..], &plan[..], &["--out", out.to_str().unwrap()]].concat());
        json(&out)
    };
    let first = counts(&dir, "1.csv", "1,0,0\n2,0,0\n3,0,1\n");
    let r = decide(&first, "bayes");
    assert!((num(&r, "/reliability") - 0.971).abs() < 1e-3);
    assert!((num(&r, "/phi") - 8.439).abs() < 1e-2);
    assert_eq!(r["verdict"], "accept");
    assert_eq!(r["cause_rates"].as_array().unwrap().len(), 2);

    let sixth = counts(&dir, "6.csv", "1,2,1\n2,0,0\n3,0,1\n");
    let r = decide(&sixth, "reliability");
    assert!((num(&r, "/reliability") - 0.693).abs() < 1e-3);
    assert!((num(&r, "/phi") - 53.155).abs() < 1e-2);
    assert_eq!(r["verdict"], "reject");

    let short = counts(&dir, "5.csv", "1,2,0\n2,2,0\n");
    let r = decide(&short, "bayes");
    assert!((num(&r, "/phi") - 55.898).abs() < 1e-2);
    assert_eq!(r["verdict"], "reject");

    let zero = counts(&dir, "0.csv", "1,0,0\n2,0,0\n3,0,0\n");
    let r = decide(&zero, "reliability");
    assert_eq!(r["fallback"], true);
    assert!((num(&r, "/reliability") - (-0.1f64 / (4.0 * 0.9)).exp()).abs() < 1e-12);
}

#[test]
fn inconsistent_counts_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = example1();
    let cfg = cfg.to_str().unwrap();
    for (name, body) in [
        ("many.csv", "1,3,2\n2,0,0\n3,0,0\n"),
        ("short.csv", "1,1,0\n"),
        ("rows.csv", "1,0,0\n2,0,0\n3,0,0\n4,0,0\n"),
    ] {
        let data = counts(&dir, name, body);
        let out = rasp(&[
            "decide",
            "--config",
            cfg,
            "--n",
            "4",
            "--h",
            "0.3",
            "--k",
            "3",
            "--data",
            data.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(2), "{name}");
    }
}

#[test]
fn simulation_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = example1();
    let run = |name: &str, reps: &str, threads: &str| -> (String, PathBuf) {
        let out = dir.path().join(name);
        let args = [
            "--threads",
            threads,
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--n",
            "4",
            "--h",
            "0.3",
            "--k",
            "3",
        ];
        ok(&[
            &args[..],
            &[
                "--reps",
                reps,
                "--seed",
                "1",
                "--out",
                out.to_str().unwrap(),
            ],
        ]
        .concat());
        (std::fs::read_to_string(&out).unwrap(), out)
    };
    let (a, path) = run("a.json", "100000", "4");
    let (b, _) = run("b.json", "100000", "1");
    assert_eq!(a, b);
    let r = json(&path);
    let (p, se) = (
        num(&r, "/oc/p_accept/mean"),
        num(&r, "/oc/p_accept/std_error"),
    );
    assert!((p - 0.4888).abs() < 3.0 * se, "{p} ± {se}");

    let (one, path) = run("one.json", "1", "2");
    assert!(one.contains("undefined"));
    assert!(json(&path)["oc"]["p_accept"]["std_error"].is_null());
}

#[test]
fn tables() {
    let out = rasp(&["tables", "--which", "9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown table"));

    let csv = ok(&["tables", "--which", "8"]);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("i,data,reliability,phi,bayes_verdict,reliability_verdict,r0")
    );
    assert_eq!(lines.count(), 6);

    let dir = TempDir::new().unwrap();
    ok(&[
        "tables",
        "--which",
        "1",
        "--config-dir",
        configs().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let t1 = std::fs::read_to_string(dir.path().join("table_1.csv")).unwrap();
    let rows: Vec<Vec<&str>> = t1.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(&r[1..4], ["4", "0.30", "3"]);
        let risk: f64 = r[9].parse().unwrap();
        assert!((risk - 33.90826).abs() < 1e-4, "{risk}");
    }
}

#[test]
fn bad_flags() {
    let cfg = example1();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(
        rasp(&["--threads", "0", "evaluate", "--config", cfg, "--n", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(rasp(&["evaluate", "--config", cfg]).status.code(), Some(2));
    assert_eq!(
        rasp(&["evaluate", "--config", cfg, "--n", "3", "--h", "0.2"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        rasp(&["evaluate", "--config", "/nonexistent.json", "--n", "0"])
            .status
            .code(),
        Some(2)
    );
    let approx = rasp(&[
        "evaluate",
        "--config",
        cfg,
        "--decision",
        "approx",
        "--n",
        "4",
        "--h",
        "0.3",
        "--k",
        "3",
    ]);
    assert_eq!(approx.status.code(), Some(2));
}
