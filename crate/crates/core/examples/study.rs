//! Baseline vs attention on the default scenario.
//!
//! `cargo run --release -p atr-core --example study -- [n] [epochs] [seeds...]`

use std::time::Instant;

use atr_core::chansim::generate_dataset;
use atr_core::evalreport::evaluate;
use atr_core::featurizer::{default_sigma_theta, featurize_dataset, SpectrumGrid};
use atr_core::network::ModelConfig;
use atr_core::scenario::Scenario;
use atr_core::training::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(2500, |s| s.parse().unwrap());
    let epochs: usize = args.get(1).map_or(50, |s| s.parse().unwrap());
    let seeds: Vec<u64> = if args.len() > 2 { args[2..].iter().map(|s| s.parse().unwrap()).collect() } else { vec![1, 2, 3] };
    let sc = Scenario::default();
    let grid = SpectrumGrid::default();
    for seed in seeds {
        let t0 = Instant::now();
        let ds = generate_dataset(n, &sc.arena, &sc.aps, &sc.channel, seed).unwrap();
        let fs = featurize_dataset(&ds, &grid, default_sigma_theta(&grid)).unwrap();
        eprintln!("seed {seed}: data {:.1}s", t0.elapsed().as_secs_f64());
        let cfg = TrainConfig { epochs, seed, ..Default::default() };
        for attention in [false, true] {
            let t = Instant::now();
            let env = |k: &str, d: usize| std::env::var(k).ok().map_or(d, |v| v.parse().unwrap());
            let d = ModelConfig::default();
            let mc = ModelConfig {
                attention_enabled: attention,
                init_seed: seed,
                base_channels: env("STUDY_C", d.base_channels),
                n_res_blocks: env("STUDY_RES", d.n_res_blocks),
                latent_dim: env("STUDY_D", d.latent_dim),
                alpha_confidence: env("STUDY_ALPHA", 1) == 1,
                ..d
            };
            let out = train::<f64>(&fs, mc, &cfg).unwrap();
            let rep = evaluate(&out.trained, &fs, "test").unwrap();
            let alpha: Vec<String> = rep.mean_alpha().map(|a| a.iter().map(|v| format!("{v:.3}")).collect()).unwrap_or_default();
            let last = out.log.rows.last();
            eprintln!(
                "seed {seed} attention={attention}: median {:.1} cm mean {:.1} cm alpha {:?} best_epoch {} loss {:?} in {:.1}s",
                rep.percentile_cm(50.0),
                rep.mean_cm(),
                alpha,
                out.trained.best_epoch,
                last.map(|r| (r.total, r.loc, r.aoa)),
                t.elapsed().as_secs_f64()
            );
        }
    }
}
