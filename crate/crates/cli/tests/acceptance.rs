//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fail.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use atr_core::chansim::generate_dataset;
use atr_core::evalreport::{compare, evaluate, uniformity, PercentileTable, TABLE_METRICS};
use atr_core::featurizer::{default_sigma_theta, featurize_dataset, SpectrumGrid};
use atr_core::network::ModelConfig;
use atr_core::scenario::{Scenario, DEGRADED_AP};
use atr_core::selftest::{
    attention_suite, featurizer_oracle, gradcheck_ops, gradcheck_total_loss, joint_relabel_check, triangulation_oracle, Check,
};
use atr_core::training::{train, TrainConfig};

const SEEDS: [u64; 3] = [1, 2, 3];
const STUDY_SAMPLES: usize = 2500;
const STUDY_EPOCHS: usize = 50;
const STUDY_BUDGET_S: f64 = 15.0 * 60.0;
const ORACLE_SEED: u64 = 42;

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn summarize(checks: &[Check]) -> (bool, String) {
    let passed = checks.iter().all(|c| c.passed);
    let detail = checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    (passed, detail)
}

struct SeedResult {
    seed: u64,
    base_median_cm: f64,
    ours_median_cm: f64,
    alpha: Vec<f64>,
}

fn study() -> Result<(Vec<SeedResult>, f64), String> {
    let t0 = Instant::now();
    let sc = Scenario::default();
    let grid = SpectrumGrid::default();
    let mut out = Vec::new();
    for seed in SEEDS {
        let ds = generate_dataset(STUDY_SAMPLES, &sc.arena, &sc.aps, &sc.channel, seed).map_err(|e| e.to_string())?;
        let fs = featurize_dataset(&ds, &grid, default_sigma_theta(&grid)).map_err(|e| e.to_string())?;
        let cfg = TrainConfig { epochs: STUDY_EPOCHS, seed, ..Default::default() };
        let mut medians = [0.0; 2];
        let mut alpha = Vec::new();
        for (i, attention) in [false, true].into_iter().enumerate() {
            let mc = ModelConfig { attention_enabled: attention, init_seed: seed, ..Default::default() };
            let trained = train::<f64>(&fs, mc, &cfg).map_err(|e| e.to_string())?;
            let report = evaluate(&trained.trained, &fs, "test").map_err(|e| e.to_string())?;
            medians[i] = report.percentile_cm(50.0);
            if attention {
                alpha = report.mean_alpha().ok_or("attention model reported no weights")?;
            }
        }
        eprintln!("  seed {seed}: baseline {:.1} cm, attention {:.1} cm, alpha {:.3?}", medians[0], medians[1], alpha);
        out.push(SeedResult { seed, base_median_cm: medians[0], ours_median_cm: medians[1], alpha });
    }
    Ok((out, t0.elapsed().as_secs_f64()))
}

fn criterion_2(results: &[SeedResult], secs: f64) -> (bool, String) {
    let per_seed: Vec<String> = results
        .iter()
        .map(|r| format!("seed {} {:.1} vs {:.1} cm", r.seed, r.ours_median_cm, r.base_median_cm))
        .collect();
    let all = results.len() == SEEDS.len() && results.iter().all(|r| r.ours_median_cm <= r.base_median_cm);
    (all && secs < STUDY_BUDGET_S, format!("{} (attention vs baseline median); {:.0} s", per_seed.join(", "), secs))
}

fn criterion_3(results: &[SeedResult]) -> (bool, String) {
    let mut hits = 0;
    let mut parts = Vec::new();
    for r in results {
        let bound = 1.0 / r.alpha.len() as f64 - 0.02;
        let a = r.alpha[DEGRADED_AP];
        let min = r.alpha.iter().all(|&x| a <= x);
        let hit = min && a < bound;
        hits += hit as usize;
        parts.push(format!("seed {} alpha[{DEGRADED_AP}] = {a:.3} (min: {min}, bound {bound:.2})", r.seed));
    }
    (hits >= 2, format!("{hits}/3 seeds; {}", parts.join(", ")))
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let d = |n: &str| dir.join(n).to_string_lossy().into_owned();
    let mut steps: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--n".into(), "120".into(), "--seed".into(), "9".into(), "--out".into(), d("data.atrd")],
        vec!["featurize".into(), "--in".into(), d("data.atrd"), "--out".into(), d("feat.atrf")],
    ];
    for (mode, name) in [("off", "base"), ("on", "ours")] {
        steps.push(
            ["train", "--data", &d("feat.atrf"), "--attention", mode, "--epochs", "3", "--seed", "9"]
                .iter()
                .map(|s| s.to_string())
                .chain(["--out-ckpt".into(), d(&format!("{name}.atrw")), "--log".into(), d(&format!("{name}_log.csv"))])
                .collect(),
        );
        steps.push(vec![
            "eval".into(),
            "--ckpt".into(),
            d(&format!("{name}.atrw")),
            "--data".into(),
            d("feat.atrf"),
            "--out-dir".into(),
            d(name),
        ]);
    }
    steps.push(vec!["compare".into(), "--base-dir".into(), d("base"), "--ours-dir".into(), d("ours"), "--out".into(), d("comparison.csv")]);
    for args in steps {
        let o = Command::new(env!("CARGO_BIN_EXE_atr"))
            .args(&args)
            .env("ATR_THREADS", "0")
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&o.stderr)));
        }
    }
    Ok(())
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> (bool, String) {
    let run = || -> Result<(bool, String), String> {
        let a = tempfile::tempdir().map_err(|e| e.to_string())?;
        let b = tempfile::tempdir().map_err(|e| e.to_string())?;
        run_pipeline(a.path())?;
        run_pipeline(b.path())?;
        let fa = files_under(a.path());
        let fb = files_under(b.path());
        if fa != fb {
            return Ok((false, format!("file sets differ: {fa:?} vs {fb:?}")));
        }
        let differing: Vec<String> = fa
            .iter()
            .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
            .map(|f| f.display().to_string())
            .collect();
        Ok((differing.is_empty(), format!("{} files compared, differing: {differing:?}", fa.len())))
    };
    run().unwrap_or_else(|e| (false, e))
}

fn main() -> ExitCode {
    let mut outcomes = Vec::new();
    let mut push = |id, name, (passed, detail): (bool, String)| {
        let o = Outcome { id, name, passed, detail };
        println!("{} {}. {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
        outcomes.push(o);
    };

    let report_rows: Vec<&str> = TABLE_METRICS.to_vec();
    push(
        1,
        "absolute numbers not claimed",
        (
            report_rows == ["Median", "Mean", "90th", "95th", "99th"],
            "reports carry the five headline metrics; absolute values are not compared to published ones".into(),
        ),
    );

    push(4, "simplex and equivariance", {
        let mut checks = attention_suite(1000, ORACLE_SEED);
        checks.push(joint_relabel_check(100, ORACLE_SEED));
        summarize(&checks)
    });
    push(5, "gradient oracle", {
        let ops = gradcheck_ops(20, ORACLE_SEED);
        let worst = ops.iter().filter(|c| !c.passed).map(|c| c.to_string()).collect::<Vec<_>>();
        let total = gradcheck_total_loss(20, ORACLE_SEED);
        (
            worst.is_empty() && total.passed,
            format!("{} primitive ops, failing {worst:?}; {}", ops.len(), total.detail),
        )
    });
    push(6, "triangulation oracle", summarize(&triangulation_oracle(100, ORACLE_SEED)));
    push(7, "featurizer oracle", summarize(&featurizer_oracle(200, ORACLE_SEED)));
    push(8, "report arithmetic", {
        let base = PercentileTable::from_values("test", 1, [63.17, 77.90, 140.63, 172.0, 302.32]);
        let ours = PercentileTable::from_values("test", 1, [45.01, 54.01, 92.88, 114.32, 183.20]);
        let deltas: Vec<String> = match compare(&base, &ours) {
            Ok(c) => c.rows.iter().map(|r| format!("{:+.1}", r.delta_pct)).collect(),
            Err(e) => vec![e.to_string()],
        };
        let u = uniformity(&[0.25; 4]).unwrap_or(f64::NAN);
        (
            deltas == ["+28.7", "+30.7", "+34.0", "+33.5", "+39.4"] && u == 1.0,
            format!("deltas {deltas:?}, uniformity {u}"),
        )
    });
    push(9, "determinism", criterion_9());

    eprintln!("training {} seeds x 2 models on {STUDY_SAMPLES} samples for {STUDY_EPOCHS} epochs", SEEDS.len());
    match study() {
        Ok((results, secs)) => {
            push(2, "attention-benefit direction", criterion_2(&results, secs));
            push(3, "degraded-AP attention", criterion_3(&results));
        }
        Err(e) => {
            push(2, "attention-benefit direction", (false, e.clone()));
            push(3, "degraded-AP attention", (false, e));
        }
    }

    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
