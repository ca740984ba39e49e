use super::*;
use crate::chansim::generate_dataset;
use crate::featurizer::{default_sigma_theta, featurize_dataset, SpectrumGrid};
use crate::scenario::Scenario;

fn tiny_features(n: usize, seed: u64) -> FeatureSet {
    let sc = Scenario::default();
    let ds = generate_dataset(n, &sc.arena, &sc.aps, &sc.channel, seed).unwrap();
    let grid = SpectrumGrid::new(16, 16, 200e-9).unwrap();
    featurize_dataset(&ds, &grid, default_sigma_theta(&grid)).unwrap()
}

fn tiny_model() -> ModelConfig {
    ModelConfig { base_channels: 4, latent_dim: 8, ..Default::default() }
}

#[test]
fn split_is_deterministic_partition() {
    let s = Split::new(2500, 7);
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (2000, 250, 250));
    assert_eq!(s, Split::new(2500, 7));
    assert_ne!(s, Split::new(2500, 8));
    let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..2500).collect::<Vec<_>>());
    let small = Split::new(10, 1);
    assert_eq!((small.train.len(), small.val.len(), small.test.len()), (8, 1, 1));
}

#[test]
fn zero_epochs_returns_initialization() {
    let fs = tiny_features(20, 3);
    let cfg = TrainConfig { epochs: 0, ..Default::default() };
    let out = train::<f64>(&fs, tiny_model(), &cfg).unwrap();
    let init = Model::<f64>::new(model_config_for(&fs, tiny_model())).unwrap();
    assert_eq!(out.trained.model.params, init.params);
    assert!(out.log.rows.is_empty());
}

#[test]
fn training_is_deterministic_and_logs_are_sane() {
    let fs = tiny_features(20, 5);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, ..Default::default() };
    let a = train::<f64>(&fs, tiny_model(), &cfg).unwrap();
    let b = train::<f64>(&fs, tiny_model(), &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.rows.len(), 2);
    for row in &a.log.rows {
        assert!(row.total >= 0.0 && row.loc >= 0.0 && row.aoa >= 0.0);
        assert!((row.total - row.loc - row.aoa).abs() < 1e-9 * row.total.max(1.0));
        assert_eq!(row.alpha.len(), 4);
        assert!((row.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.val_median_m.is_finite());
    }
    let csv = a.log.to_csv();
    assert!(csv.starts_with("epoch,total,loc,aoa,alpha_1,alpha_2,alpha_3,alpha_4,val_median_m\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn baseline_log_leaves_alpha_blank() {
    let fs = tiny_features(20, 5);
    let cfg = TrainConfig { epochs: 1, batch_size: 8, ..Default::default() };
    let out = train::<f64>(&fs, ModelConfig { attention_enabled: false, ..tiny_model() }, &cfg).unwrap();
    let line = out.log.to_csv().lines().nth(1).unwrap().to_string();
    assert!(line.contains(",,,,"));
}

#[test]
fn every_parameter_receives_gradient() {
    let fs = tiny_features(8, 11);
    let mut model = Model::<f64>::new(model_config_for(&fs, tiny_model())).unwrap();
    let aps = fs.aps.clone();
    let samples: Vec<_> = fs.samples.iter().collect();
    accumulate_batch(&mut model, &aps, &samples, 1.0, None).unwrap();
    for id in model.params.ids() {
        let norm: f64 = model.params.grad(id).iter().map(|g| g * g).sum();
        assert!(norm > 0.0, "{} has zero gradient", model.params.name(id));
    }
}

#[test]
fn lambda_increases_total_loss() {
    let fs = tiny_features(6, 13);
    let samples: Vec<_> = fs.samples.iter().collect();
    let base = Model::<f64>::new(model_config_for(&fs, tiny_model())).unwrap();
    let losses: Vec<BatchLoss<f64>> = [0.0, 0.5, 2.0]
        .iter()
        .map(|&l| accumulate_batch(&mut base.clone(), &fs.aps, &samples, l, None).unwrap())
        .collect();
    assert_eq!(losses[0].total, losses[0].loc);
    assert!(losses[0].total < losses[1].total && losses[1].total < losses[2].total);
    assert!((losses[2].aoa - 4.0 * losses[1].aoa).abs() < 1e-12);
}

#[test]
fn trained_checkpoint_round_trip() {
    let fs = tiny_features(20, 17);
    let cfg = TrainConfig { epochs: 1, batch_size: 8, seed: u64::MAX - 5, ..Default::default() };
    let out = train::<f64>(&fs, tiny_model(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.atrw");
    out.trained.save(&path).unwrap();
    let back = Trained::<f64>::load(&path).unwrap();
    assert_eq!(back.split_seed, u64::MAX - 5);
    assert_eq!(back.model.params, out.trained.model.params);
    assert_eq!(back.model.config, out.trained.model.config);
}

#[test]
fn config_validation_and_kv() {
    assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
    let kv = KvConfig::parse("train.lr = 0.01\ntrain.optimizer = sgd\ntrain.epochs = 3\n").unwrap();
    let cfg = TrainConfig::default().apply_kv(&kv).unwrap();
    assert_eq!((cfg.lr, cfg.epochs, cfg.optimizer), (0.01, 3, OptimizerKind::Sgd));
    let kv = KvConfig::parse("train.optimizer = rmsprop\n").unwrap();
    assert!(TrainConfig::default().apply_kv(&kv).is_err());
}

#[test]
fn empty_splits_are_rejected() {
    let fs = tiny_features(5, 1);
    assert!(matches!(
        train::<f64>(&fs, tiny_model(), &TrainConfig::default()),
        Err(TrainError::EmptySplit("val"))
    ));
}
