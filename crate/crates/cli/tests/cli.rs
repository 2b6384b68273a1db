use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kpod_core::experiments::{ExperimentConfig, AGGREGATE_HEADER, RECORD_HEADER};

fn kpod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpod")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, preset: &str, n: &str, rate: &str) -> PathBuf {
    let out = dir.join(format!("{preset}-{n}-{rate}"));
    let res = kpod(&["generate", "--preset", preset, "--n", n, "--missing-rate", rate, "--seed", "3", "--out", path(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

fn fit(data: &Path, mask: Option<&Path>, method: &str, k: &str, out: &Path) -> Output {
    let mut args = vec!["fit", "--data", path(data), "--k", k, "--method", method, "--seed", "11", "--out", path(out)];
    if let Some(m) = mask {
        args.extend(["--mask", path(m)]);
    }
    kpod(&args)
}

#[test]
fn fit_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate(dir.path(), "s1", "400", "0.3");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = fit(&d.join("data.csv"), Some(&d.join("mask.csv")), "kpod", "3", out);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    for f in ["centers.csv", "labels.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "kpod");
    assert_eq!(summary["k"], 3);
    assert!(summary["loss"].as_f64().unwrap() > 0.0);
}

#[test]
fn kpod_with_full_mask_matches_kmeans() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate(dir.path(), "s2", "300", "0");
    let (km, kp) = (dir.path().join("km"), dir.path().join("kp"));
    assert_eq!(code(&fit(&d.join("data.csv"), None, "kmeans", "3", &km)), 0);
    assert_eq!(code(&fit(&d.join("data.csv"), Some(&d.join("mask.csv")), "kpod", "3", &kp)), 0);
    for f in ["centers.csv", "labels.csv"] {
        assert_eq!(std::fs::read(km.join(f)).unwrap(), std::fs::read(kp.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn too_few_complete_cases_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("x.csv");
    let mask = dir.path().join("r.csv");
    std::fs::write(&data, "1,2\n3,4\n5,6\n7,8\n").unwrap();
    std::fs::write(&mask, "1,1\n0,1\n1,0\n0,1\n").unwrap();
    let res = fit(&data, Some(&mask), "complete-case", "3", &dir.path().join("o"));
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn invalid_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate(dir.path(), "s1", "100", "0.2");
    let (data, mask, out) = (d.join("data.csv"), d.join("mask.csv"), dir.path().join("o"));
    assert_eq!(code(&fit(&data, Some(&mask), "kpod", "0", &out)), 2);
    assert_eq!(code(&fit(&data, Some(&mask), "kpod", "101", &out)), 2);
    assert_eq!(code(&fit(&data, Some(&mask), "kmeans", "3", &out)), 2);

    let short = dir.path().join("short.csv");
    std::fs::write(&short, "1,0\n").unwrap();
    assert_eq!(code(&fit(&data, Some(&short), "kpod", "3", &out)), 2);

    let res = kpod(&["generate", "--preset", "s9", "--out", path(&out)]);
    assert_eq!(code(&res), 2);
    let res = kpod(&["generate", "--preset", "a", "--missing-rate", "1.0", "--out", path(&out)]);
    assert_eq!(code(&res), 2);

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"mode": "table", "seed": 1, "settings": [{"preset": "s1", "colour": 3}]}"#).unwrap();
    assert_eq!(code(&kpod(&["experiment", "--config", path(&cfg), "--out", path(&out)])), 2);
}

#[test]
fn check_decomposition_modes() {
    let res = kpod(&["check-decomposition", "--trials", "50"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let line = String::from_utf8(res.stdout).unwrap();
    assert!(line.starts_with("trials=50 ") && line.contains("failures=0"), "{line}");

    let res = kpod(&["check-decomposition", "--trials", "20", "--q", "1"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));

    let res = kpod(&["check-decomposition", "--monte-carlo", "--q", "0.6", "--k", "2", "--n-mc", "50000", "--seed", "4"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stdout));

    assert_eq!(code(&kpod(&["check-decomposition", "--p", "2", "--q", "0.5", "--q", "0.4", "--q", "0.3"])), 2);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let table = ExperimentConfig::load(&root.join("table1.json")).unwrap();
    let rows: usize = table.plan().unwrap().iter().map(|s| s.n.len() * s.masks.len()).sum();
    assert_eq!(rows, 7);
    for name in ["trend_a.json", "trend_b.json"] {
        let plan = ExperimentConfig::load(&root.join(name)).unwrap().plan().unwrap();
        assert_eq!(plan[0].n, vec![1000, 3000, 10000, 30000]);
    }
}

#[test]
fn experiment_writes_both_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"mode": "table", "seed": 5, "repetitions": 2, "reference": {"n_large": 5000},
            "settings": [{"id": "x", "preset": "s1", "n": 300, "missing_rate": [0.1, 0.3]}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = kpod(&["experiment", "--config", path(&cfg), "--out", path(&out), "--jobs", "2"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));

    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    let mut lines = records.lines();
    assert_eq!(lines.next(), Some(RECORD_HEADER));
    // 2 rates × 2 repetitions × 3 methods
    assert_eq!(lines.clone().count(), 12);
    assert!(lines.all(|l| l.ends_with(",ok,")), "{records}");

    let aggregate = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(aggregate.lines().next(), Some(AGGREGATE_HEADER));
    assert_eq!(aggregate.lines().count(), 7);
}
