use std::path::Path;

use anyhow::{Context, Result};

use atr_core::chansim::{generate_dataset, Dataset};
use atr_core::config::KvConfig;
use atr_core::evalreport::{compare as compare_tables, evaluate, fmt_g, PercentileTable, ReportError};
use atr_core::featurizer::{featurize_dataset, FeatureSet, SpectrumGrid};
use atr_core::network::ModelConfig;
use atr_core::scenario::Scenario;
use atr_core::selftest;
use atr_core::training::{train as run_training, TrainConfig, Trained};

use crate::{invalid, CompareArgs, EvalArgs, FeaturizeArgs, SelftestArgs, SimulateArgs, Switch, TrainArgs};

const DEFAULT_SEED: u64 = 42;

fn load_kv(path: Option<&Path>) -> Result<KvConfig> {
    let Some(path) = path else { return Ok(KvConfig::new()) };
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("--config {}: {e}", path.display())))?;
    KvConfig::parse(&text).map_err(|e| invalid(format!("--config {}: {e}", path.display())))
}

fn require_file(flag: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{flag} {}: no such file", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let kv = load_kv(a.config.as_deref())?;
    let sc = Scenario::from_kv(&kv).map_err(invalid)?;
    let n = usize::try_from(a.n).map_err(|_| invalid("--n is too large"))?;
    eprintln!("simulate: n = {n}, seed = {}, aps = {}, arena = {} x {} m", a.seed, sc.aps.len(), sc.arena.width(), sc.arena.height());
    let ds = generate_dataset(n, &sc.arena, &sc.aps, &sc.channel, a.seed)?;
    ensure_parent(&a.out)?;
    ds.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

pub fn featurize(a: &FeaturizeArgs) -> Result<()> {
    require_file("--in", &a.input)?;
    let kv = load_kv(a.config.as_deref())?;
    let n_theta: usize = kv.get_or("feat.n_theta", 32).map_err(invalid)?;
    let n_tau: usize = kv.get_or("feat.n_tau", 32).map_err(invalid)?;
    let tau_max_ns: f64 = kv.get_or("feat.tau_max_ns", 200.0).map_err(invalid)?;
    let sigma_bins: f64 = kv.get_or("feat.sigma_theta_bins", 3.0).map_err(invalid)?;
    let grid = SpectrumGrid::new(n_theta, n_tau, tau_max_ns * 1e-9).map_err(invalid)?;
    if !(sigma_bins > 0.0) {
        return Err(invalid("feat.sigma_theta_bins must be positive"));
    }
    let ds = Dataset::load(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    eprintln!("featurize: {} frames onto a {n_theta} x {n_tau} grid (tau_max {tau_max_ns} ns)", ds.frames.len());
    let fs = featurize_dataset(&ds, &grid, sigma_bins * grid.theta_step())?;
    ensure_parent(&a.out)?;
    fs.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    require_file("--data", &a.data)?;
    let kv = load_kv(a.config.as_deref())?;
    let mut tc = TrainConfig::default().apply_kv(&kv).map_err(invalid)?;
    let seed = a.seed.or(kv.get("train.seed").map_err(invalid)?).unwrap_or(DEFAULT_SEED);
    tc.seed = seed;
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    tc.validate().map_err(invalid)?;
    let mut mc = ModelConfig::default().apply_kv(&kv).map_err(invalid)?;
    mc.attention_enabled = a.attention == Switch::On;
    if kv.raw("model.init_seed").is_none() {
        mc.init_seed = seed;
    }
    let fs = FeatureSet::load(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let mc = atr_core::training::model_config_for(&fs, mc);
    mc.validate().map_err(invalid)?;
    eprintln!(
        "train: seed = {seed}, attention = {}, epochs = {}, batch = {}, lr = {}, lambda = {}, samples = {}",
        mc.attention_enabled,
        tc.epochs,
        tc.batch_size,
        tc.lr,
        tc.lambda,
        fs.samples.len()
    );
    let out = run_training::<f64>(&fs, mc, &tc)?;
    ensure_parent(&a.out_ckpt)?;
    out.trained.save(&a.out_ckpt)?;
    ensure_parent(&a.log)?;
    out.log.save(&a.log).with_context(|| format!("writing {}", a.log.display()))?;
    if let Some(best) = out.log.rows.get(out.trained.best_epoch.wrapping_sub(1)) {
        eprintln!("train: best epoch {} with validation median {} m", best.epoch, fmt_g(best.val_median_m));
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    require_file("--ckpt", &a.ckpt)?;
    require_file("--data", &a.data)?;
    if !matches!(a.split.as_str(), "train" | "val" | "test") {
        return Err(invalid(format!("--split {}: expected train, val or test", a.split)));
    }
    let trained = Trained::<f64>::load(&a.ckpt).with_context(|| format!("reading {}", a.ckpt.display()))?;
    let fs = FeatureSet::load(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let report = evaluate(&trained, &fs, &a.split).map_err(|e| match e {
        ReportError::EmptySplit(_) | ReportError::UnknownSplit(_) => invalid(e),
        other => other.into(),
    })?;
    report.write_dir(&a.out_dir)?;
    print!("{}", report.table().to_csv());
    if let Some(u) = report.uniformity() {
        println!("uniformity,{}", fmt_g(u?));
    }
    Ok(())
}

fn read_table(flag: &str, dir: &Path) -> Result<PercentileTable> {
    let path = dir.join("report.csv");
    require_file(flag, &path)?;
    let text = std::fs::read_to_string(&path)?;
    PercentileTable::parse_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let base = read_table("--base-dir", &a.base_dir)?;
    let ours = read_table("--ours-dir", &a.ours_dir)?;
    let cmp = compare_tables(&base, &ours).map_err(|e| match e {
        ReportError::SplitMismatch { .. } => invalid(e),
        other => other.into(),
    })?;
    ensure_parent(&a.out)?;
    std::fs::write(&a.out, cmp.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{}", cmp.to_csv());
    Ok(())
}

pub fn selftest(a: &SelftestArgs) -> Result<()> {
    let checks = selftest::run_all(a.seed);
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        anyhow::bail!("{failed} of {} checks failed", checks.len());
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}
