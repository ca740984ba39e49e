//! Encoder, router attention and decoder.
//!
//! Every AP slice passes through the same encoder weights, the attention
//! scores each router with one shared MLP, and the decoder maps each router's
//! latent to an AoA likelihood profile with shared weights. Reordering APs
//! therefore reorders every per-router output identically.

mod attention;
mod params;

pub use attention::AttentionVars;
pub use params::{Checkpoint, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use thiserror::Error;

use crate::autodiff::{AutodiffError, ConvSpec, Graph, Tensor, Var};
use crate::binio::FormatError;
use crate::config::{ConfigError, KvConfig};
use crate::featurizer::{theta_grid, HeatmapStack};
use crate::scalar::Scalar;

/// Instance-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("model config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Kv(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of routers `R`.
    pub n_ap: usize,
    pub n_theta: usize,
    pub n_tau: usize,
    pub base_channels: usize,
    pub n_res_blocks: usize,
    /// Per-router latent width `d`.
    pub latent_dim: usize,
    pub attention_enabled: bool,
    /// Hidden width `m` of the scoring MLP.
    pub attention_hidden: usize,
    /// Score each router from `[s_r, mean_r s_r]` instead of `s_r` alone.
    pub global_context: bool,
    /// Use the attention weights as triangulation confidences.
    pub alpha_confidence: bool,
    /// Soft-argmax temperature.
    pub temperature: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_ap: 4,
            n_theta: 32,
            n_tau: 32,
            base_channels: 4,
            n_res_blocks: 1,
            latent_dim: 32,
            attention_enabled: true,
            attention_hidden: 8,
            global_context: true,
            alpha_confidence: true,
            temperature: 0.05,
            init_seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let fail = |m: &str| Err(NetworkError::Config(m.to_string()));
        if self.n_ap < 2 {
            return fail("n_ap must be >= 2");
        }
        if self.latent_dim < 1 || self.attention_hidden < 1 || self.base_channels < 1 {
            return fail("latent_dim, attention_hidden and base_channels must be >= 1");
        }
        if self.n_theta < 8 || !self.n_theta.is_multiple_of(4) {
            return fail("n_theta must be a multiple of 4 and >= 8");
        }
        if self.n_tau < 8 {
            return fail("n_tau must be >= 8");
        }
        if !(self.temperature > 0.0) {
            return fail("temperature must be positive");
        }
        Ok(())
    }

    /// Width of the scoring MLP input.
    pub fn score_inputs(&self) -> usize {
        if self.global_context {
            2
        } else {
            1
        }
    }

    /// Reads `model.*` keys over `self`.
    pub fn apply_kv(mut self, kv: &KvConfig) -> Result<Self, NetworkError> {
        self.base_channels = kv.get_or("model.base_channels", self.base_channels)?;
        self.n_res_blocks = kv.get_or("model.n_res_blocks", self.n_res_blocks)?;
        self.latent_dim = kv.get_or("model.latent_dim", self.latent_dim)?;
        self.attention_hidden = kv.get_or("model.attention_hidden", self.attention_hidden)?;
        self.temperature = kv.get_or("model.temperature", self.temperature)?;
        self.init_seed = kv.get_or("model.init_seed", self.init_seed)?;
        if let Some(v) = kv.get_flag("model.attention")? {
            self.attention_enabled = v;
        }
        if let Some(v) = kv.get_flag("model.global_context")? {
            self.global_context = v;
        }
        if let Some(v) = kv.get_flag("model.alpha_confidence")? {
            self.alpha_confidence = v;
        }
        Ok(self)
    }

    fn meta(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("meta.model.n_ap", self.n_ap as f64),
            ("meta.model.n_theta", self.n_theta as f64),
            ("meta.model.n_tau", self.n_tau as f64),
            ("meta.model.base_channels", self.base_channels as f64),
            ("meta.model.n_res_blocks", self.n_res_blocks as f64),
            ("meta.model.latent_dim", self.latent_dim as f64),
            ("meta.model.attention", self.attention_enabled as u8 as f64),
            ("meta.model.attention_hidden", self.attention_hidden as f64),
            ("meta.model.global_context", self.global_context as u8 as f64),
            ("meta.model.alpha_confidence", self.alpha_confidence as u8 as f64),
            ("meta.model.temperature", self.temperature),
            ("meta.model.init_seed", self.init_seed as f64),
        ]
    }

    fn from_meta(ck: &Checkpoint) -> Result<Self, NetworkError> {
        let get = |k: &str| {
            ck.get(k)
                .filter(|t| t.numel() == 1)
                .map(|t| t.item())
                .ok_or_else(|| NetworkError::Config(format!("checkpoint lacks `{k}`")))
        };
        let cfg = Self {
            n_ap: get("meta.model.n_ap")? as usize,
            n_theta: get("meta.model.n_theta")? as usize,
            n_tau: get("meta.model.n_tau")? as usize,
            base_channels: get("meta.model.base_channels")? as usize,
            n_res_blocks: get("meta.model.n_res_blocks")? as usize,
            latent_dim: get("meta.model.latent_dim")? as usize,
            attention_enabled: get("meta.model.attention")? != 0.0,
            attention_hidden: get("meta.model.attention_hidden")? as usize,
            global_context: get("meta.model.global_context")? != 0.0,
            alpha_confidence: get("meta.model.alpha_confidence")? != 0.0,
            temperature: get("meta.model.temperature")?,
            init_seed: get("meta.model.init_seed")? as u64,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
    spec: ConvSpec,
}

impl Conv {
    fn new<S: Scalar>(
        ps: &mut ParamStore<S>,
        name: &str,
        shape: [usize; 4],
        fan_in: usize,
        spec: ConvSpec,
        seed: u64,
    ) -> Self {
        let w = ps.add_kaiming(format!("{name}.weight"), &shape, fan_in, seed);
        let b = ps.add_zeros(format!("{name}.bias"), &[shape[0]]);
        Self { w, b, spec }
    }

    /// Weight laid out `[C_in, C_out, kh, kw]`.
    fn new_transpose<S: Scalar>(
        ps: &mut ParamStore<S>,
        name: &str,
        shape: [usize; 4],
        fan_in: usize,
        spec: ConvSpec,
        seed: u64,
    ) -> Self {
        let w = ps.add_kaiming(format!("{name}.weight"), &shape, fan_in, seed);
        let b = ps.add_zeros(format!("{name}.bias"), &[shape[1]]);
        Self { w, b, spec }
    }

    fn apply<S: Scalar>(&self, g: &mut Graph<S>, p: &[Var], x: Var) -> Result<Var, AutodiffError> {
        g.conv2d(x, p[self.w.0], Some(p[self.b.0]), self.spec)
    }

    fn apply_transpose<S: Scalar>(&self, g: &mut Graph<S>, p: &[Var], x: Var) -> Result<Var, AutodiffError> {
        g.conv2d_transpose(x, p[self.w.0], Some(p[self.b.0]), self.spec)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, fan_in: usize, fan_out: usize, seed: u64) -> Self {
        let w = ps.add_kaiming(format!("{name}.weight"), &[fan_in, fan_out], fan_in, seed);
        let b = ps.add_zeros(format!("{name}.bias"), &[fan_out]);
        Self { w, b }
    }

    /// `[n, in] -> [n, out]`
    pub(crate) fn apply<S: Scalar>(&self, g: &mut Graph<S>, p: &[Var], x: Var) -> Result<Var, AutodiffError> {
        let y = g.matmul(x, p[self.w.0])?;
        g.add(y, p[self.b.0])
    }
}

#[derive(Debug, Clone)]
struct Layers {
    stem: Conv,
    res: Vec<(Conv, Conv)>,
    down: [Conv; 2],
    enc_proj: Linear,
    enc_spatial: (usize, usize),
    score: Option<(Linear, Linear)>,
    dec_proj: Linear,
    up: [Conv; 2],
    head: Conv,
}

fn conv_out(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p - k) / s + 1
}

/// Per-router attention summary for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState<S> {
    /// Pooled latent summaries `s_r`.
    pub s: Vec<S>,
    /// Raw scores `u_r`.
    pub u: Vec<S>,
    /// Softmax weights `alpha_r`.
    pub alpha: Vec<S>,
}

/// Model prediction for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput<S> {
    /// `[n_ap][n_theta]` likelihoods in `(0, 1)`.
    pub aoa_maps: Vec<S>,
    /// Soft-argmax AoA per router, radians.
    pub aoa_values: Vec<S>,
    pub attention: Option<AttentionState<S>>,
}

/// Graph handles of one forward pass over a batch.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[B, R, d]`
    pub latent: Var,
    /// `[B, R, d]`, equal to `latent` without attention.
    pub attended: Var,
    /// `[B, R, n_theta]`
    pub maps: Var,
    /// `[B, R]`
    pub aoa: Var,
    pub attention: Option<AttentionVars>,
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    layers: Layers,
    theta: Vec<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let c = config.base_channels;
        let seed = config.init_seed;
        let mut ps = ParamStore::new();
        let stem = Conv::new(&mut ps, "enc.stem", [c, 1, 7, 7], 49, ConvSpec::new(2, 3), seed);
        let res = (0..config.n_res_blocks)
            .map(|i| {
                let a = Conv::new(&mut ps, &format!("enc.res{i}.conv1"), [c, c, 3, 3], 9 * c, ConvSpec::new(1, 1), seed);
                let b = Conv::new(&mut ps, &format!("enc.res{i}.conv2"), [c, c, 3, 3], 9 * c, ConvSpec::new(1, 1), seed);
                (a, b)
            })
            .collect();
        let down = [
            Conv::new(&mut ps, "enc.down0", [2 * c, c, 3, 3], 9 * c, ConvSpec::new(2, 1), seed),
            Conv::new(&mut ps, "enc.down1", [2 * c, 2 * c, 3, 3], 18 * c, ConvSpec::new(2, 1), seed),
        ];
        let mut hw = (conv_out(config.n_theta, 7, 2, 3), conv_out(config.n_tau, 7, 2, 3));
        for _ in 0..2 {
            hw = (conv_out(hw.0, 3, 2, 1), conv_out(hw.1, 3, 2, 1));
        }
        let flat = 2 * c * hw.0 * hw.1;
        let enc_proj = Linear::new(&mut ps, "enc.proj", flat, config.latent_dim, seed);
        let q = config.n_theta / 4;
        let dec_proj = Linear::new(&mut ps, "dec.proj", config.latent_dim, 2 * c * q, seed);
        let up_spec = ConvSpec { stride: (1, 2), pad: (0, 1) };
        let up = [
            Conv::new_transpose(&mut ps, "dec.up0", [2 * c, c, 1, 4], 2 * c * 4, up_spec, seed),
            Conv::new_transpose(&mut ps, "dec.up1", [c, c, 1, 4], c * 4, up_spec, seed),
        ];
        let head_spec = ConvSpec { stride: (1, 1), pad: (0, 1) };
        let head = Conv::new(&mut ps, "dec.head", [1, c, 1, 3], 3 * c, head_spec, seed);
        // last, so baseline and attention models share every other initial weight
        let score = config.attention_enabled.then(|| {
            let m = config.attention_hidden;
            (
                Linear::new(&mut ps, "attn.fc1", config.score_inputs(), m, seed),
                Linear::new(&mut ps, "attn.fc2", m, 1, seed),
            )
        });
        let theta = theta_grid(config.n_theta).into_iter().map(S::lit).collect();
        let layers = Layers { stem, res, down, enc_proj, enc_spatial: hw, score, dec_proj, up, head };
        Ok(Self { config, params: ps, layers, theta })
    }

    /// Angle grid of the decoder output, radians.
    pub fn theta(&self) -> &[S] {
        &self.theta
    }

    /// Heatmaps `[B, R, n_theta, n_tau]` to latents `[B, R, d]`.
    pub fn encode(&self, g: &mut Graph<S>, p: &[Var], x: Var) -> Result<Var, AutodiffError> {
        let shape = g.shape(x).to_vec();
        let cfg = &self.config;
        if shape.len() != 4 || shape[1] != cfg.n_ap || shape[2] != cfg.n_theta || shape[3] != cfg.n_tau {
            return Err(AutodiffError::ShapeMismatch {
                op: "encode",
                lhs: shape,
                rhs: vec![0, cfg.n_ap, cfg.n_theta, cfg.n_tau],
            });
        }
        let (b, r) = (shape[0], shape[1]);
        let l = &self.layers;
        let eps = S::lit(NORM_EPS);
        let x = g.reshape(x, &[b * r, 1, cfg.n_theta, cfg.n_tau])?;
        let x = l.stem.apply(g, p, x)?;
        let mut h = g.tanh(x)?;
        for (c1, c2) in &l.res {
            let y = c1.apply(g, p, h)?;
            let y = g.instance_norm(y, eps)?;
            let y = g.relu(y)?;
            let y = c2.apply(g, p, y)?;
            let y = g.instance_norm(y, eps)?;
            h = g.add(h, y)?;
        }
        for d in &l.down {
            let y = d.apply(g, p, h)?;
            h = g.relu(y)?;
        }
        let (sh, sw) = l.enc_spatial;
        let h = g.reshape(h, &[b * r, 2 * cfg.base_channels * sh * sw])?;
        let z = l.enc_proj.apply(g, p, h)?;
        g.reshape(z, &[b, r, cfg.latent_dim])
    }

    /// Latents `[B, R, d]` to `(maps [B, R, n_theta], aoa [B, R])`.
    pub fn decode(&self, g: &mut Graph<S>, p: &[Var], h: Var) -> Result<(Var, Var), AutodiffError> {
        let shape = g.shape(h).to_vec();
        let cfg = &self.config;
        if shape.len() != 3 || shape[1] != cfg.n_ap || shape[2] != cfg.latent_dim {
            return Err(AutodiffError::ShapeMismatch { op: "decode", lhs: shape, rhs: vec![0, cfg.n_ap, cfg.latent_dim] });
        }
        let (b, r) = (shape[0], shape[1]);
        let c = cfg.base_channels;
        let l = &self.layers;
        let eps = S::lit(NORM_EPS);
        let x = g.reshape(h, &[b * r, cfg.latent_dim])?;
        let x = l.dec_proj.apply(g, p, x)?;
        let x = g.reshape(x, &[b * r, 2 * c, 1, cfg.n_theta / 4])?;
        let mut x = g.relu(x)?;
        for up in &l.up {
            let y = up.apply_transpose(g, p, x)?;
            let y = g.instance_norm(y, eps)?;
            x = g.relu(y)?;
        }
        let y = l.head.apply(g, p, x)?;
        let y = g.sigmoid(y)?;
        let maps = g.reshape(y, &[b, r, cfg.n_theta])?;
        let aoa = g.soft_argmax_1d(maps, &self.theta, S::lit(cfg.temperature))?;
        Ok((maps, aoa))
    }

    /// Router attention over `[B, R, d]`; `None` when attention is disabled.
    pub fn attend(&self, g: &mut Graph<S>, p: &[Var], h: Var) -> Result<Option<(Var, AttentionVars)>, AutodiffError> {
        match &self.layers.score {
            None => Ok(None),
            Some((fc1, fc2)) => attention::attend(g, p, h, fc1, fc2, self.config.global_context).map(Some),
        }
    }

    /// Full forward pass: encode, attend (if enabled), decode.
    pub fn forward_graph(&self, g: &mut Graph<S>, p: &[Var], x: Var) -> Result<ForwardVars, AutodiffError> {
        let latent = self.encode(g, p, x)?;
        let (attended, attention) = match self.attend(g, p, latent)? {
            Some((h, a)) => (h, Some(a)),
            None => (latent, None),
        };
        let (maps, aoa) = self.decode(g, p, attended)?;
        Ok(ForwardVars { latent, attended, maps, aoa, attention })
    }

    /// Stacks heatmaps into a `[B, R, n_theta, n_tau]` tensor.
    pub fn batch_tensor(&self, stacks: &[&HeatmapStack]) -> Result<Tensor<S>, NetworkError> {
        let cfg = &self.config;
        let mut data = Vec::with_capacity(stacks.len() * cfg.n_ap * cfg.n_theta * cfg.n_tau);
        for s in stacks {
            if s.n_ap != cfg.n_ap || s.n_theta != cfg.n_theta || s.n_tau != cfg.n_tau {
                return Err(NetworkError::Config(format!(
                    "heatmap stack {}x{}x{} does not match model {}x{}x{}",
                    s.n_ap, s.n_theta, s.n_tau, cfg.n_ap, cfg.n_theta, cfg.n_tau
                )));
            }
            data.extend(s.data.iter().map(|v| S::lit(*v)));
        }
        Ok(Tensor::new(vec![stacks.len(), cfg.n_ap, cfg.n_theta, cfg.n_tau], data)?)
    }

    /// Inference on a batch of heatmap stacks.
    pub fn forward(&self, stacks: &[&HeatmapStack]) -> Result<Vec<ModelOutput<S>>, NetworkError> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g)?;
        let x = g.input(self.batch_tensor(stacks)?)?;
        let out = self.forward_graph(&mut g, &p, x)?;
        Ok(self.collect_outputs(&g, &out, stacks.len()))
    }

    /// Splits batched graph values into per-sample outputs.
    pub fn collect_outputs(&self, g: &Graph<S>, out: &ForwardVars, batch: usize) -> Vec<ModelOutput<S>> {
        let r = self.config.n_ap;
        let t = self.config.n_theta;
        let maps = g.value(out.maps).data();
        let aoa = g.value(out.aoa).data();
        (0..batch)
            .map(|i| ModelOutput {
                aoa_maps: maps[i * r * t..(i + 1) * r * t].to_vec(),
                aoa_values: aoa[i * r..(i + 1) * r].to_vec(),
                attention: out.attention.map(|a| {
                    let part = |v: Var| g.value(v).data()[i * r..(i + 1) * r].to_vec();
                    AttentionState { s: part(a.s), u: part(a.u), alpha: part(a.alpha) }
                }),
            })
            .collect()
    }

    /// Parameters plus `meta.model.*` config scalars.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (k, v) in self.config.meta() {
            ck.push(k, Tensor::scalar(v));
        }
        for id in self.params.ids() {
            ck.push(self.params.name(id), self.params.value(id).cast());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NetworkError> {
        let mut model = Self::new(ModelConfig::from_meta(ck)?)?;
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            let t = ck.get(&name).ok_or_else(|| NetworkError::Config(format!("checkpoint lacks `{name}`")))?;
            if t.shape() != model.params.value(id).shape() {
                return Err(NetworkError::Config(format!("checkpoint tensor `{name}` has shape {:?}", t.shape())));
            }
            *model.params.value_mut(id) = t.cast();
        }
        Ok(model)
    }
}
