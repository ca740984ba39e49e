//! Loss, optimizer and the training loop.

mod loss;
mod optim;

pub use loss::{
    loss_aoa, loss_aoa_graph, loss_loc, loss_loc_graph, predict_position, total_loss_graph, triangulate_graph,
    LossVars,
};
pub use optim::{Optimizer, OptimizerKind};

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor};
use crate::config::{ConfigError, KvConfig};
use crate::featurizer::{FeatureSample, FeatureSet};
use crate::geometry::{ApPose, GeometryError, Point2};
use crate::network::{Checkpoint, Model, ModelConfig, ModelOutput, NetworkError};
use crate::rng::{substream, StreamKind};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),
    #[error("train config: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kv(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Drives the split and the batch order.
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lambda: 1.0, lr: 1e-3, batch_size: 16, epochs: 50, seed: 42, optimizer: OptimizerKind::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainError::Config("lambda must be >= 0".into()));
        }
        Ok(())
    }

    /// Reads `train.*` keys over `self`.
    pub fn apply_kv(mut self, kv: &KvConfig) -> Result<Self, TrainError> {
        self.lambda = kv.get_or("train.lambda", self.lambda)?;
        self.lr = kv.get_or("train.lr", self.lr)?;
        self.batch_size = kv.get_or("train.batch_size", self.batch_size)?;
        self.epochs = kv.get_or("train.epochs", self.epochs)?;
        self.seed = kv.get_or("train.seed", self.seed)?;
        match kv.raw("train.optimizer") {
            None => {}
            Some("sgd") => self.optimizer = OptimizerKind::Sgd,
            Some("adam") => {
                self.optimizer = OptimizerKind::Adam {
                    beta1: kv.get_or("train.beta1", 0.9)?,
                    beta2: kv.get_or("train.beta2", 0.999)?,
                    eps: kv.get_or("train.adam_eps", 1e-8)?,
                }
            }
            Some(other) => return Err(TrainError::Config(format!("unknown optimizer `{other}`"))),
        }
        Ok(self)
    }
}

/// Deterministic 80/10/10 partition of sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut substream(seed, StreamKind::Split, 0, 0));
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Self { train: idx, val, test }
    }

    pub fn get(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub loc: f64,
    pub aoa: f64,
    /// Mean attention weight per AP over the epoch; empty without attention.
    pub alpha: Vec<f64>,
    pub val_median_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub n_ap: usize,
    pub rows: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,total,loc,aoa");
        for r in 1..=self.n_ap {
            let _ = write!(s, ",alpha_{r}");
        }
        s.push_str(",val_median_m\n");
        for row in &self.rows {
            let _ = write!(s, "{},{},{},{}", row.epoch, row.total, row.loc, row.aoa);
            for r in 0..self.n_ap {
                match row.alpha.get(r) {
                    Some(a) => {
                        let _ = write!(s, ",{a}");
                    }
                    None => s.push(','),
                }
            }
            let _ = writeln!(s, ",{}", row.val_median_m);
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// A model plus the split seed it was trained under.
#[derive(Debug, Clone)]
pub struct Trained<S> {
    pub model: Model<S>,
    pub split_seed: u64,
    pub best_epoch: usize,
}

fn push_u64(ck: &mut Checkpoint, key: &str, v: u64) {
    ck.push(format!("{key}.hi"), Tensor::scalar((v >> 32) as f64));
    ck.push(format!("{key}.lo"), Tensor::scalar((v & 0xffff_ffff) as f64));
}

fn get_u64(ck: &Checkpoint, key: &str) -> Option<u64> {
    let half = |s: &str| ck.get(&format!("{key}.{s}")).filter(|t| t.numel() == 1).map(|t| t.item() as u64);
    Some(half("hi")? << 32 | half("lo")?)
}

impl<S: Scalar> Trained<S> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        push_u64(&mut ck, "meta.train.split_seed", self.split_seed);
        ck.push("meta.train.best_epoch", Tensor::scalar(self.best_epoch as f64));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let model = Model::from_checkpoint(ck)?;
        let split_seed = get_u64(ck, "meta.train.split_seed")
            .ok_or_else(|| TrainError::Config("checkpoint lacks the split seed".into()))?;
        let best_epoch = ck.get("meta.train.best_epoch").map(|t| t.item() as usize).unwrap_or(0);
        Ok(Self { model, split_seed, best_epoch })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        self.to_checkpoint().save(path).map_err(NetworkError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Self::from_checkpoint(&Checkpoint::load(path).map_err(NetworkError::from)?)
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub trained: Trained<S>,
    pub log: TrainLog,
    pub split: Split,
}

/// Model output, triangulated position and error for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<S> {
    pub index: usize,
    pub output: ModelOutput<S>,
    pub position: Point2<S>,
    pub error: S,
}

fn cast_aps<S: Scalar>(aps: &[ApPose<f64>]) -> Vec<ApPose<S>> {
    aps.iter()
        .map(|a| ApPose {
            position: Point2::new(S::lit(a.position.x), S::lit(a.position.y)),
            boresight: S::lit(a.boresight),
            array_spacing: S::lit(a.array_spacing),
            n_antennas: a.n_antennas,
        })
        .collect()
}

/// Model config with the data-dependent fields taken from `fs`.
pub fn model_config_for(fs: &FeatureSet, base: ModelConfig) -> ModelConfig {
    ModelConfig { n_ap: fs.n_ap(), n_theta: fs.grid.theta.len(), n_tau: fs.grid.tau.len(), ..base }
}

const INFER_BATCH: usize = 64;

/// Runs the model over `indices` and triangulates each sample.
pub fn infer<S: Scalar>(model: &Model<S>, fs: &FeatureSet, indices: &[usize]) -> Result<Vec<Prediction<S>>, TrainError> {
    let aps = cast_aps::<S>(&fs.aps);
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(INFER_BATCH) {
        let stacks: Vec<_> = chunk.iter().map(|&i| &fs.samples[i].heatmaps).collect();
        let outs = model.forward(&stacks)?;
        for (&i, output) in chunk.iter().zip(outs) {
            let position = predict_position(&output, &aps, model.config.alpha_confidence)?;
            let t = &fs.samples[i].true_pos;
            let error = position.dist(&Point2::new(S::lit(t.x), S::lit(t.y)));
            preds.push(Prediction { index: i, output, position, error });
        }
    }
    Ok(preds)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Batch tensors: heatmaps `[B,R,T,D]`, truth `[B,2]`, AoA targets `[B,R,T]`.
pub fn batch_tensors<S: Scalar>(
    model: &Model<S>,
    samples: &[&FeatureSample],
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>), TrainError> {
    let stacks: Vec<_> = samples.iter().map(|s| &s.heatmaps).collect();
    let x = model.batch_tensor(&stacks)?;
    let truth = samples.iter().flat_map(|s| [S::lit(s.true_pos.x), S::lit(s.true_pos.y)]).collect();
    let truth = Tensor::new(vec![samples.len(), 2], truth)?;
    let cfg = &model.config;
    let target: Vec<S> = samples.iter().flat_map(|s| s.target.values.iter().map(|v| S::lit(*v))).collect();
    let target = Tensor::new(vec![samples.len(), cfg.n_ap, cfg.n_theta], target)?;
    Ok((x, truth, target))
}

/// Loss values of one batch and its accumulated parameter gradients.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss<S> {
    pub total: S,
    pub loc: S,
    pub aoa: S,
}

/// Forward and backward over one batch; gradients are added to `model.params`.
pub fn accumulate_batch<S: Scalar>(
    model: &mut Model<S>,
    aps: &[ApPose<S>],
    samples: &[&FeatureSample],
    lambda: S,
    alpha_sums: Option<&mut [f64]>,
) -> Result<BatchLoss<S>, TrainError> {
    let (x, truth, target) = batch_tensors(model, samples)?;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g)?;
    let x = g.input(x)?;
    let truth = g.input(truth)?;
    let target = g.input(target)?;
    let out = model.forward_graph(&mut g, &p, x)?;
    let weights = if model.config.alpha_confidence { out.attention.map(|a| a.alpha) } else { None };
    let l = total_loss_graph(&mut g, out.aoa, out.maps, weights, aps, truth, target, lambda)?;
    g.backward(l.total)?;
    model.params.accumulate(&g, &p);
    if let (Some(sums), Some(a)) = (alpha_sums, out.attention) {
        let r = sums.len();
        for (i, v) in g.value(a.alpha).data().iter().enumerate() {
            sums[i % r] += v.as_f64();
        }
    }
    Ok(BatchLoss { total: g.scalar(l.total), loc: g.scalar(l.loc), aoa: g.scalar(l.aoa) })
}

fn non_finite(e: TrainError, epoch: usize, batch: usize) -> TrainError {
    match e {
        TrainError::Autodiff(AutodiffError::NonFinite { .. }) => TrainError::NonFinite { epoch, batch },
        other => other,
    }
}

/// Trains on the `train` split and keeps the parameters with the lowest
/// validation median error.
pub fn train<S: Scalar>(fs: &FeatureSet, model_cfg: ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome<S>, TrainError> {
    cfg.validate()?;
    if fs.samples.is_empty() {
        return Err(TrainError::EmptySplit("dataset"));
    }
    let split = Split::new(fs.samples.len(), cfg.seed);
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    let mut model = Model::<S>::new(model_config_for(fs, model_cfg))?;
    let aps = cast_aps::<S>(&fs.aps);
    let lambda = S::lit(cfg.lambda);
    let r = model.config.n_ap;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, &model.params);
    let mut log = TrainLog { n_ap: r, rows: Vec::with_capacity(cfg.epochs) };
    let mut best = Trained { model: model.clone(), split_seed: cfg.seed, best_epoch: 0 };
    let mut best_val = f64::INFINITY;

    for epoch in 1..=cfg.epochs {
        let mut order = split.train.clone();
        order.shuffle(&mut substream(cfg.seed, StreamKind::Batches, 0, epoch));
        let (mut total, mut loc, mut aoa) = (0.0, 0.0, 0.0);
        let mut alpha = model.config.attention_enabled.then(|| vec![0.0; r]);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<_> = chunk.iter().map(|&i| &fs.samples[i]).collect();
            let l = accumulate_batch(&mut model, &aps, &samples, lambda, alpha.as_deref_mut())
                .map_err(|e| non_finite(e, epoch, bi))?;
            let grads_ok = model.params.ids().all(|id| model.params.grad(id).iter().all(|v| v.is_finite()));
            if !grads_ok || !l.total.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: bi });
            }
            let w = chunk.len() as f64;
            total += l.total.as_f64() * w;
            loc += l.loc.as_f64() * w;
            aoa += l.aoa.as_f64() * w;
            opt.step(&mut model.params);
        }
        let n = order.len() as f64;
        let mut errors: Vec<f64> =
            infer(&model, fs, &split.val)?.into_iter().map(|p| p.error.as_f64()).collect();
        let val_median_m = median(&mut errors);
        if !val_median_m.is_finite() {
            return Err(TrainError::NonFinite { epoch, batch: order.len().div_ceil(cfg.batch_size) });
        }
        if val_median_m < best_val {
            best_val = val_median_m;
            best = Trained { model: model.clone(), split_seed: cfg.seed, best_epoch: epoch };
        }
        log.rows.push(EpochRecord {
            epoch,
            total: total / n,
            loc: loc / n,
            aoa: aoa / n,
            alpha: alpha.map(|a| a.into_iter().map(|v| v / n).collect()).unwrap_or_default(),
            val_median_m,
        });
    }
    Ok(TrainOutcome { trained: best, log, split })
}

#[cfg(test)]
mod tests;
