//! Acceptance suite. Every criterion prints a single `PASS`/`FAIL` line to
//! the real stdout (bypassing the test harness capture) and then asserts.
//! Thresholds are the published ones and are not loosened here.

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use kpod_core::experiments::{run_table, run_trend, ExperimentConfig, ExperimentOutput, Method};
use kpod_core::oracle::ReferenceCache;
use kpod_core::{
    decomposition_check, gen_mask, km_fit, kpod_fit, kpod_fit_imputed_form, CenterMatrix, DataMatrix, FitOptions,
    MaskMatrix, McarSpec, RngSeed,
};
use rand::Rng;

fn report(id: &str, ok: bool, elapsed: Duration, detail: String) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{verdict} {id} ({:.1}s): {detail}", elapsed.as_secs_f64()).unwrap();
    out.flush().unwrap();
    assert!(ok, "{id} failed: {detail}");
}

fn random_instance(seed: RngSeed, n: usize, p: usize, q_low: f64) -> (DataMatrix, MaskMatrix) {
    let mut rng = seed.rng();
    let blobs: Vec<Vec<f64>> = (0..4).map(|_| (0..p).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
    let values = (0..n)
        .flat_map(|i| blobs[i % 4].iter().map(|c| c + rng.gen_range(-2.0..2.0)).collect::<Vec<_>>())
        .collect();
    let x = DataMatrix::new(n, p, values).unwrap();
    let q = McarSpec::new((0..p).map(|_| rng.gen_range(q_low..=1.0)).collect()).unwrap();
    let r = gen_mask(n, &q, seed.derive("mask")).unwrap();
    (x.masked(&r).unwrap(), r)
}

#[test]
fn p1_decomposition_identity() {
    let start = Instant::now();
    let root = RngSeed(0x5031);
    let (mut worst, mut failures) = (0.0f64, 0);
    for t in 0..500u64 {
        let seed = root.derive_index("instance", t);
        let mut rng = seed.derive("shape").rng();
        let (n, p, k) = (rng.gen_range(1..=500), rng.gen_range(1..=6), rng.gen_range(1..=4));
        let (x, r) = random_instance(seed, n, p, 0.05);
        let m = CenterMatrix::new(k, p, (0..k * p).map(|_| rng.gen_range(-8.0..8.0)).collect()).unwrap();
        let rep = decomposition_check(&x, &r, &m).unwrap();
        worst = worst.max(rep.abs_diff / (1.0 + rep.lhs.abs()));
        if rep.abs_diff > 1e-10 * (1.0 + rep.lhs.abs()) {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        "P1",
        failures == 0 && elapsed < Duration::from_secs(10),
        elapsed,
        format!("500 instances, max |lhs-rhs|/(1+|lhs|) = {worst:.2e}, failures = {failures}"),
    );
}

#[test]
fn p2_full_mask_equivalence() {
    let start = Instant::now();
    let root = RngSeed(0x5032);
    let mut mismatches = Vec::new();
    for t in 0..100u64 {
        let seed = root.derive_index("instance", t);
        let mut rng = seed.derive("shape").rng();
        let (n, p) = (rng.gen_range(20..=400), rng.gen_range(1..=6));
        let k = rng.gen_range(1..=5);
        let (x, _) = random_instance(seed, n, p, 0.5);
        let opts = FitOptions::new(k).with_restarts(rng.gen_range(1..=10)).with_seed(seed.derive("fit"));
        let kp = kpod_fit(&x, &MaskMatrix::ones(n, p), &opts).unwrap();
        let km = km_fit(&x, &opts).unwrap();
        if kp.fit != km || !kp.degenerate_cells.is_empty() || !kp.all_missing_rows.is_empty() {
            mismatches.push(t);
        }
    }
    let elapsed = start.elapsed();
    report(
        "P2",
        mismatches.is_empty() && elapsed < Duration::from_secs(30),
        elapsed,
        format!("100 instances, field mismatches at {mismatches:?}"),
    );
}

#[test]
fn p3_formulation_equivalence() {
    let start = Instant::now();
    let root = RngSeed(0x5033);
    let (mut worst, mut bad) = (0.0f64, Vec::new());
    for t in 0..50u64 {
        let seed = root.derive_index("instance", t);
        let mut rng = seed.derive("shape").rng();
        let (n, p, k) = (rng.gen_range(20..=300), rng.gen_range(1..=6), rng.gen_range(1..=4));
        let (x, r) = random_instance(seed, n, p, 0.3);
        let opts = FitOptions::new(k).with_restarts(5).with_seed(seed.derive("fit"));
        let a = kpod_fit(&x, &r, &opts).unwrap().fit;
        let b = kpod_fit_imputed_form(&x, &r, &opts).unwrap().fit;
        if a.trajectory.len() != b.trajectory.len() {
            bad.push(t);
            continue;
        }
        let gap = a.trajectory.iter().zip(&b.trajectory).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        worst = worst.max(gap);
        if gap > 1e-10 {
            bad.push(t);
        }
    }
    report(
        "P3",
        bad.is_empty(),
        start.elapsed(),
        format!("50 instances, max per-iteration gap {worst:.2e}, disagreeing instances {bad:?}"),
    );
}

/// Exact minimum of the masked objective over every 2-labeling of the rows.
fn exhaustive_kpod(x: &DataMatrix, r: &MaskMatrix) -> f64 {
    let (n, p) = (x.n(), x.p());
    (0u32..1 << n)
        .map(|code| {
            let mut total = 0.0;
            for l in 0..2 {
                for j in 0..p {
                    let obs: Vec<f64> = (0..n)
                        .filter(|&i| (code >> i) & 1 == l && r.is_observed(i, j))
                        .map(|i| x.get(i, j))
                        .collect();
                    if !obs.is_empty() {
                        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
                        total += obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
                    }
                }
            }
            total / n as f64
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn p4_brute_force_optimality() {
    let start = Instant::now();
    let root = RngSeed(0x5034);
    let (mut worst, mut bad) = (0.0f64, Vec::new());
    for t in 0..50u64 {
        let seed = root.derive_index("instance", t);
        let mut rng = seed.derive("shape").rng();
        let (n, p) = (rng.gen_range(3..=8), rng.gen_range(1..=4));
        let (x, r) = random_instance(seed, n, p, 0.4);
        let fit = kpod_fit(&x, &r, &FitOptions::new(2).with_restarts(50).with_seed(seed.derive("fit"))).unwrap();
        let best = exhaustive_kpod(&x, &r);
        let rel = (fit.fit.loss - best).abs() / best.max(f64::MIN_POSITIVE);
        if best > 0.0 {
            worst = worst.max(rel);
        }
        if (fit.fit.loss - best).abs() > 1e-9 * best {
            bad.push(t);
        }
    }
    report(
        "P4",
        bad.is_empty(),
        start.elapsed(),
        format!("50 instances, max relative gap {worst:.2e}, suboptimal instances {bad:?}"),
    );
}

fn table_run(settings: &str, reps: usize) -> ExperimentOutput {
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{"mode": "table", "seed": 20240601, "repetitions": {reps}, "settings": [{settings}]}}"#
    ))
    .unwrap();
    run_table(&cfg, &ReferenceCache::in_memory()).unwrap()
}

fn mean_mse(out: &ExperimentOutput, setting: &str, n: usize, rate: f64, method: Method) -> f64 {
    out.aggregate_for(setting, n, rate, method)
        .and_then(|a| a.mse_mean)
        .unwrap_or(f64::NAN)
}

#[test]
fn q1_setting_one_low_missingness() {
    let start = Instant::now();
    let out = table_run(r#"{"id": "1", "preset": "s1", "n": 3000, "missing_rate": 0.1}"#, 30);
    let elapsed = start.elapsed();
    let [oracle, cc, kp] = Method::ALL.map(|m| mean_mse(&out, "1", 3000, 0.1, m));
    let within = |v: f64, lo: f64, hi: f64| (lo..=hi).contains(&v);
    let ok = within(kp, 0.05, 0.09)
        && within(cc, 0.025, 0.055)
        && within(oracle, 0.02, 0.05)
        && elapsed < Duration::from_secs(300);
    report(
        "Q1",
        ok,
        elapsed,
        format!("k-POD {kp:.4} in [0.05,0.09], complete-case {cc:.4} in [0.025,0.055], oracle {oracle:.4} in [0.02,0.05]"),
    );
}

#[test]
fn q2_setting_one_high_missingness() {
    let start = Instant::now();
    let out = table_run(r#"{"id": "1", "preset": "s1", "n": 3000, "missing_rate": 0.5}"#, 30);
    let [oracle, _, kp] = Method::ALL.map(|m| mean_mse(&out, "1", 3000, 0.5, m));
    report(
        "Q2",
        (0.35..=0.80).contains(&kp) && kp >= 5.0 * oracle,
        start.elapsed(),
        format!("k-POD {kp:.4} in [0.35,0.80], oracle {oracle:.4}, ratio {:.1} >= 5", kp / oracle),
    );
}

#[test]
fn q3_setting_three() {
    let start = Instant::now();
    let out = table_run(r#"{"id": "3", "preset": "s3", "n": 10000, "missing_rate": 0.1}"#, 10);
    let elapsed = start.elapsed();
    let [oracle, cc, kp] = Method::ALL.map(|m| mean_mse(&out, "3", 10000, 0.1, m));
    let cc_fail = out
        .aggregate_for("3", 10000, 0.1, Method::CompleteCase)
        .map_or(0.0, |a| a.fail_frac);
    // A complete-case arm that failed on every repetition has no mean but
    // still counts as far worse than k-POD.
    let cc_bad = cc > 5.0 || cc_fail > 0.5;
    let ordered = oracle < kp && (cc.is_nan() || kp < cc);
    report(
        "Q3",
        ordered && kp < 0.2 && cc_bad && elapsed < Duration::from_secs(900),
        elapsed,
        format!("oracle {oracle:.4} < k-POD {kp:.4} < 0.2, complete-case {cc:.3} (fail fraction {cc_fail:.2})"),
    );
}

#[test]
fn q4_trend_plateau() {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_json(
        r#"{"mode": "trend", "seed": 20240602, "repetitions": 20,
            "settings": [{"id": "a", "preset": "a", "n": [1000, 3000, 10000, 30000]}]}"#,
    )
    .unwrap();
    let out = run_trend(&cfg, &ReferenceCache::in_memory()).unwrap();
    let elapsed = start.elapsed();
    let rate = out.aggregates[0].missing_rate;
    let at = |n: usize, m: Method| mean_mse(&out, "a", n, rate, m);
    let (o_small, o_large) = (at(1000, Method::Oracle), at(30000, Method::Oracle));
    let (k_mid, k_large) = (at(10000, Method::Kpod), at(30000, Method::Kpod));
    let ok = o_large < o_small / 5.0
        && k_large > 10.0 * o_large
        && (k_large - k_mid).abs() <= 0.25 * k_mid
        && elapsed < Duration::from_secs(1200);
    report(
        "Q4",
        ok,
        elapsed,
        format!(
            "oracle {o_small:.4} -> {o_large:.4} (needs < 1/5), k-POD {k_mid:.4} -> {k_large:.4} (within 25%, > 10x oracle)"
        ),
    );
}

#[test]
fn p5_thread_count_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"mode": "table", "seed": 7, "repetitions": 4,
            "reference": {"n_large": 20000},
            "settings": [
                {"id": "1", "preset": "s1", "n": 600, "missing_rate": [0.1, 0.5]},
                {"id": "2", "preset": "s2", "n": 600, "missing_rate": 0.3}
            ]}"#,
    )
    .unwrap();
    let run = |jobs: &str| {
        let out = dir.path().join(format!("jobs{jobs}"));
        let status = Command::new(env!("CARGO_BIN_EXE_kpod"))
            .args(["experiment", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        ["records.csv", "aggregate.csv"].map(|f| std::fs::read(out.join(f)).unwrap())
    };
    let (one, eight) = (run("1"), run("8"));
    report(
        "P5",
        one == eight,
        start.elapsed(),
        format!(
            "records.csv identical: {}, aggregate.csv identical: {}",
            one[0] == eight[0],
            one[1] == eight[1]
        ),
    );
}
