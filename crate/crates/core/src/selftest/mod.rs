//! Oracle checks shared by the `selftest` command and the test suites.

mod gradcheck;

pub use gradcheck::{gradcheck, GradCheck, FD_STEP, REL_FLOOR};

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AutodiffError, ConvSpec, Graph, Tensor, Var};
use crate::chansim::{render_paths, sample_position, synthesize_csi, trace_paths, ChannelConfig, CsiFrame};
use crate::featurizer::{csi_to_heatmap, delay_marginal, make_aoa_target, HeatmapStack, SpectrumGrid};
use crate::geometry::{
    triangulate, triangulation_condition, triangulation_residual, ApPose, Arena, BearingSet, Point2,
};
use crate::network::{Model, ModelConfig};
use crate::scenario::Scenario;
use crate::training::{predict_position, total_loss_graph};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn from_result(name: &str, r: Result<Check, String>) -> Self {
        r.unwrap_or_else(|e| Check::new(name, false, format!("error: {e}")))
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Per-op gradient tolerance.
pub const OP_TOLERANCE: f64 = 1e-6;
/// End-to-end loss gradient tolerance.
pub const LOSS_TOLERANCE: f64 = 1e-4;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

type Builder = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>>;

/// One gradient case per differentiable op, plus a composed graph.
fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Builder, Vec<Tensor<f64>>)> {
    let theta: Vec<f64> = (0..7).map(|i| -1.0 + i as f64 / 3.0).collect();
    let conv_grid = theta.clone();
    vec![
        ("add", Box::new(|g, v| g.add(v[0], v[1])), vec![randn(rng, &[3, 4], 1.0), randn(rng, &[4], 1.0)]),
        ("sub", Box::new(|g, v| g.sub(v[0], v[1])), vec![randn(rng, &[2, 1, 3], 1.0), randn(rng, &[4, 1], 1.0)]),
        ("mul", Box::new(|g, v| g.mul(v[0], v[1])), vec![randn(rng, &[3, 4], 1.0), randn(rng, &[3, 1], 1.0)]),
        ("div", Box::new(|g, v| g.div(v[0], v[1])), vec![randn(rng, &[3, 4], 1.0), uniform(rng, &[4], 0.5, 2.0)]),
        ("scale", Box::new(|g, v| g.scale(v[0], -1.7)), vec![randn(rng, &[5], 1.0)]),
        ("offset", Box::new(|g, v| g.offset(v[0], 0.3)), vec![randn(rng, &[5], 1.0)]),
        ("relu", Box::new(|g, v| g.relu(v[0])), vec![randn(rng, &[4, 5], 1.0)]),
        ("tanh", Box::new(|g, v| g.tanh(v[0])), vec![randn(rng, &[4, 5], 1.0)]),
        ("sigmoid", Box::new(|g, v| g.sigmoid(v[0])), vec![randn(rng, &[4, 5], 2.0)]),
        ("exp", Box::new(|g, v| g.exp(v[0])), vec![randn(rng, &[6], 1.0)]),
        ("log", Box::new(|g, v| g.log(v[0])), vec![uniform(rng, &[6], 0.2, 3.0)]),
        ("sin", Box::new(|g, v| g.sin(v[0])), vec![randn(rng, &[6], 2.0)]),
        ("cos", Box::new(|g, v| g.cos(v[0])), vec![randn(rng, &[6], 2.0)]),
        ("matmul", Box::new(|g, v| g.matmul(v[0], v[1])), vec![randn(rng, &[3, 5], 1.0), randn(rng, &[5, 4], 1.0)]),
        (
            "conv2d",
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), ConvSpec::new(1, 1))),
            vec![randn(rng, &[2, 2, 5, 6], 1.0), randn(rng, &[3, 2, 3, 3], 0.5), randn(rng, &[3], 1.0)],
        ),
        (
            "conv2d_strided",
            Box::new(|g, v| g.conv2d(v[0], v[1], None, ConvSpec::new(2, 3))),
            vec![randn(rng, &[1, 1, 9, 8], 1.0), randn(rng, &[2, 1, 7, 7], 0.3)],
        ),
        (
            "conv2d_transpose",
            Box::new(|g, v| g.conv2d_transpose(v[0], v[1], Some(v[2]), ConvSpec { stride: (1, 2), pad: (0, 1) })),
            vec![randn(rng, &[2, 3, 1, 4], 1.0), randn(rng, &[3, 2, 1, 4], 0.5), randn(rng, &[2], 1.0)],
        ),
        ("softmax", Box::new(|g, v| g.softmax(v[0], 1)), vec![randn(rng, &[3, 5, 2], 1.5)]),
        ("sum", Box::new(|g, v| g.sum(v[0], 0)), vec![randn(rng, &[3, 4], 1.0)]),
        ("mean", Box::new(|g, v| g.mean(v[0], 2)), vec![randn(rng, &[2, 3, 4], 1.0)]),
        ("sum_all", Box::new(|g, v| g.sum_all(v[0])), vec![randn(rng, &[2, 3], 1.0)]),
        ("mean_all", Box::new(|g, v| g.mean_all(v[0])), vec![randn(rng, &[2, 3], 1.0)]),
        (
            "concat",
            Box::new(|g, v| g.concat(&[v[0], v[1]], 1)),
            vec![randn(rng, &[2, 3, 2], 1.0), randn(rng, &[2, 1, 2], 1.0)],
        ),
        ("reshape", Box::new(|g, v| g.reshape(v[0], &[6, 2])), vec![randn(rng, &[3, 4], 1.0)]),
        ("broadcast_to", Box::new(|g, v| g.broadcast_to(v[0], &[2, 3, 4])), vec![randn(rng, &[3, 1], 1.0)]),
        ("instance_norm", Box::new(|g, v| g.instance_norm(v[0], 1e-5)), vec![randn(rng, &[2, 3, 4, 5], 1.0)]),
        ("l1_loss", Box::new(|g, v| g.l1_loss(v[0], v[1])), vec![randn(rng, &[4, 3], 1.0), randn(rng, &[4, 3], 1.0)]),
        ("l2_loss", Box::new(|g, v| g.l2_loss(v[0], v[1])), vec![randn(rng, &[4, 3], 1.0), randn(rng, &[4, 3], 1.0)]),
        (
            "soft_argmax_1d",
            Box::new(move |g, v| g.soft_argmax_1d(v[0], &theta, 0.3)),
            vec![uniform(rng, &[2, 3, 7], 0.0, 1.0)],
        ),
        (
            "conv_norm_relu_mean",
            Box::new(move |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), ConvSpec::new(1, 1))?;
                let y = g.instance_norm(y, 1e-5)?;
                let y = g.relu(y)?;
                let y = g.mean(y, 3)?;
                let _ = &conv_grid;
                g.mean(y, 2)
            }),
            vec![randn(rng, &[2, 2, 5, 5], 1.0), randn(rng, &[3, 2, 3, 3], 0.5), randn(rng, &[3], 0.1)],
        ),
    ]
}

/// Finite-difference check of every primitive op at [`OP_TOLERANCE`].
pub fn gradcheck_ops(probes: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    op_cases(&mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, (name, f, inputs))| {
            let label = format!("gradient {name}");
            match gradcheck(f, &inputs, probes, FD_STEP, seed.wrapping_add(i as u64)) {
                Ok(r) => Check::new(
                    label,
                    r.max_rel_err < OP_TOLERANCE,
                    format!("max rel err {:.2e} over {} probes ({} redrawn at kinks)", r.max_rel_err, r.probes, r.redrawn),
                ),
                Err(e) => Check::new(label, false, format!("error: {e}")),
            }
        })
        .collect()
}

/// Small model config used by the end-to-end checks.
pub fn probe_model_config(n_ap: usize) -> ModelConfig {
    ModelConfig {
        n_ap,
        n_theta: 16,
        n_tau: 16,
        base_channels: 2,
        n_res_blocks: 1,
        latent_dim: 4,
        attention_hidden: 3,
        ..Default::default()
    }
}

fn random_stack(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> HeatmapStack {
    let n = cfg.n_ap * cfg.n_theta * cfg.n_tau;
    HeatmapStack {
        n_ap: cfg.n_ap,
        n_theta: cfg.n_theta,
        n_tau: cfg.n_tau,
        data: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        grid: SpectrumGrid::new(cfg.n_theta, cfg.n_tau, 200e-9).expect("valid grid"),
    }
}

/// Gradient of the full objective (network, soft-argmax, attention-weighted
/// triangulation, L1 AoA term) with respect to every parameter, on a
/// two-sample batch.
pub fn gradcheck_total_loss(probes: usize, seed: u64) -> Check {
    let name = "gradient total_loss";
    let run = || -> Result<Check, String> {
        let sc = Scenario::default();
        let cfg = ModelConfig { init_seed: seed, ..probe_model_config(sc.aps.len()) };
        let model = Model::<f64>::new(cfg.clone()).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stacks = [random_stack(&mut rng, &cfg), random_stack(&mut rng, &cfg)];
        let x = model.batch_tensor(&[&stacks[0], &stacks[1]]).map_err(|e| e.to_string())?;
        let pts: Vec<Point2<f64>> = (0..2).map(|i| sample_position(&sc.arena, seed ^ i)).collect();
        let truth = Tensor::new(vec![2, 2], pts.iter().flat_map(|p| [p.x, p.y]).collect()).map_err(|e| e.to_string())?;
        let theta = crate::featurizer::theta_grid(cfg.n_theta);
        let mut target = Vec::new();
        for p in &pts {
            target.extend(make_aoa_target(p, &sc.aps, &sc.arena, &theta, 0.2).map_err(|e| e.to_string())?.values);
        }
        let target = Tensor::new(vec![2, cfg.n_ap, cfg.n_theta], target).map_err(|e| e.to_string())?;
        let params: Vec<Tensor<f64>> = model.params.ids().map(|id| model.params.value(id).clone()).collect();
        let aps = sc.aps.clone();
        let f = move |g: &mut Graph<f64>, p: &[Var]| {
            let xv = g.input(x.clone())?;
            let out = model.forward_graph(g, p, xv)?;
            let t = g.input(truth.clone())?;
            let tg = g.input(target.clone())?;
            let w = out.attention.map(|a| a.alpha);
            Ok(total_loss_graph(g, out.aoa, out.maps, w, &aps, t, tg, 0.7)?.total)
        };
        let r = gradcheck(f, &params, probes, FD_STEP, seed).map_err(|e| e.to_string())?;
        Ok(Check::new(
            name,
            r.max_rel_err < LOSS_TOLERANCE,
            format!(
                "max rel err {:.2e} over {} probes of {} parameter tensors ({} redrawn at kinks)",
                r.max_rel_err,
                r.probes,
                params.len(),
                r.redrawn
            ),
        ))
    };
    Check::from_result(name, run())
}

fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Attention simplex and exact permutation equivariance on random latents,
/// and no NaN at extreme magnitudes.
pub fn attention_suite(n_latents: usize, seed: u64) -> Vec<Check> {
    let run = || -> Result<Vec<Check>, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst_sum: f64 = 0.0;
        let mut open_interval = true;
        let mut equivariant = true;
        let mut extreme_ok = true;
        for i in 0..n_latents {
            let r = rng.gen_range(2..=6);
            let d = rng.gen_range(1..=8);
            let cfg = ModelConfig {
                n_ap: r,
                latent_dim: d,
                global_context: i % 2 == 0,
                init_seed: seed.wrapping_add(i as u64),
                ..probe_model_config(r)
            };
            let model = Model::<f64>::new(cfg).map_err(|e| e.to_string())?;
            let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
            let h = randn(&mut rng, &[1, r, d], scale);
            let perm = random_perm(&mut rng, r);
            let mut moved = vec![0.0; r * d];
            for (dst, &src) in perm.iter().enumerate() {
                moved[dst * d..(dst + 1) * d].copy_from_slice(&h.data()[src * d..(src + 1) * d]);
            }
            let alpha = attend_alpha(&model, h).map_err(|e| e.to_string())?;
            let alpha_p = attend_alpha(&model, Tensor::new(vec![1, r, d], moved).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            worst_sum = worst_sum.max((alpha.iter().sum::<f64>() - 1.0).abs());
            open_interval &= alpha.iter().all(|a| *a > 0.0 && *a < 1.0);
            equivariant &= perm.iter().enumerate().all(|(dst, &src)| alpha_p[dst].to_bits() == alpha[src].to_bits());

            let big = Tensor::from_fn(&[1, r, d], |_| if rng.gen_bool(0.5) { 1e3 } else { -1e3 } * rng.gen_range(0.5..1.0));
            let a = attend_alpha(&model, big).map_err(|e| e.to_string())?;
            extreme_ok &= a.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
                && (a.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        }
        Ok(vec![
            Check::new(
                "attention simplex",
                worst_sum <= 1e-9 && open_interval,
                format!("{n_latents} latents, max |sum - 1| = {worst_sum:.1e}, all in (0,1): {open_interval}"),
            ),
            Check::new("attention permutation equivariance", equivariant, format!("{n_latents} latents, bitwise")),
            Check::new("attention at +-1e3 latents", extreme_ok, format!("{n_latents} latents, finite and normalized")),
        ])
    };
    run().unwrap_or_else(|e| vec![Check::new("attention suite", false, format!("error: {e}"))])
}

fn attend_alpha(model: &Model<f64>, h: Tensor<f64>) -> Result<Vec<f64>, AutodiffError> {
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g)?;
    let hv = g.input(h)?;
    let (_, a) = model.attend(&mut g, &p, hv)?.expect("attention enabled");
    Ok(g.value(a.alpha).data().to_vec())
}

/// Relabeling heatmap slices together with AP poses leaves the triangulated
/// position unchanged.
pub fn joint_relabel_check(cases: usize, seed: u64) -> Check {
    let name = "joint relabeling invariance";
    let run = || -> Result<Check, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for i in 0..cases {
            let r = rng.gen_range(3..=5);
            let arena = Arena::square(8.0);
            let aps = random_aps(&mut rng, &arena, r);
            let cfg = ModelConfig { init_seed: seed.wrapping_add(i as u64), alpha_confidence: i % 2 == 0, ..probe_model_config(r) };
            let model = Model::<f64>::new(cfg.clone()).map_err(|e| e.to_string())?;
            let stack = random_stack(&mut rng, &cfg);
            let perm = random_perm(&mut rng, r);
            let aps_p: Vec<ApPose<f64>> = perm.iter().map(|&k| aps[k]).collect();
            let a = &model.forward(&[&stack]).map_err(|e| e.to_string())?[0];
            let b = &model.forward(&[&stack.permuted(&perm)]).map_err(|e| e.to_string())?[0];
            let pa = predict_position(a, &aps, cfg.alpha_confidence).map_err(|e| e.to_string())?;
            let pb = predict_position(b, &aps_p, cfg.alpha_confidence).map_err(|e| e.to_string())?;
            worst = worst.max(pa.dist(&pb));
        }
        Ok(Check::new(name, worst < 1e-9, format!("{cases} cases, max shift {worst:.1e} m")))
    };
    Check::from_result(name, run())
}

fn random_aps(rng: &mut ChaCha8Rng, arena: &Arena<f64>, r: usize) -> Vec<ApPose<f64>> {
    (0..r)
        .map(|_| {
            let p = Point2::new(rng.gen_range(arena.min.x..arena.max.x), rng.gen_range(arena.min.y..arena.max.y));
            ApPose::new(p, rng.gen_range(-3.1..3.1), 0.03, 4).expect("valid pose")
        })
        .collect()
}

/// Minimizes the weighted squared perpendicular distance to the bearing lines
/// over a `step`-spaced grid covering `arena`.
pub fn brute_force_triangulate(bearings: &BearingSet<f64>, aps: &[ApPose<f64>], arena: &Arena<f64>, step: f64) -> Point2<f64> {
    // each line as (nx, ny, offset, weight) with unit normal (nx, ny)
    let lines: Vec<(f64, f64, f64, f64)> = bearings
        .aoas
        .iter()
        .zip(&bearings.confidences)
        .zip(aps)
        .map(|((a, w), ap)| {
            let phi = ap.boresight + a;
            let (nx, ny) = (-phi.sin(), phi.cos());
            (nx, ny, nx * ap.position.x + ny * ap.position.y, *w)
        })
        .collect();
    let nx = (arena.width() / step).round() as usize;
    let ny = (arena.height() / step).round() as usize;
    let mut best = (f64::INFINITY, arena.min);
    for iy in 0..=ny {
        let y = arena.min.y + iy as f64 * step;
        for ix in 0..=nx {
            let x = arena.min.x + ix as f64 * step;
            let v: f64 = lines.iter().map(|(a, b, c, w)| w * (a * x + b * y - c).powi(2)).sum();
            if v < best.0 {
                best = (v, Point2::new(x, y));
            }
        }
    }
    best.1
}

/// Instances whose normal matrix is worse conditioned than this are too flat
/// for a 1 cm grid to locate the minimum to 2 cm.
pub const ORACLE_MAX_CONDITION: f64 = 100.0;

/// Closed-form triangulation against a 1 cm grid search on noisy bearings,
/// and exact recovery from exact bearings. Ill-conditioned draws are excluded
/// from the position comparison but still must not lose to any grid point.
pub fn triangulation_oracle(cases: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arena = Arena::square(8.0);
    let search = Arena { min: Point2::new(-2.0, -2.0), max: Point2::new(10.0, 10.0) };
    let mut worst_grid: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    let mut residual_ok = true;
    let mut flat = 0usize;
    let mut done = 0;
    while done < cases {
        let r: usize = rng.gen_range(3..=5);
        let aps = random_aps(&mut rng, &arena, r);
        let truth = Point2::new(rng.gen_range(0.5..7.5), rng.gen_range(0.5..7.5));
        if aps.iter().any(|a| a.position.dist(&truth) < 0.5) {
            continue;
        }
        let exact = BearingSet::from_point(&truth, &aps);
        let Ok(p) = triangulate(&exact, &aps) else { continue };
        let noisy = BearingSet::with_confidences(
            exact.aoas.iter().map(|a| a + 0.03 * rng.sample::<f64, _>(StandardNormal)).collect(),
            (0..r).map(|_| rng.gen_range(0.2..1.0)).collect(),
        )
        .expect("matching lengths");
        let Ok(q) = triangulate(&noisy, &aps) else { continue };
        if !search.contains(&q) {
            continue;
        }
        worst_exact = worst_exact.max(p.dist(&truth));
        let grid = brute_force_triangulate(&noisy, &aps, &search, 0.01);
        residual_ok &= triangulation_residual(&q, &noisy, &aps) <= triangulation_residual(&grid, &noisy, &aps);
        let condition = triangulation_condition(&noisy, &aps).unwrap_or(f64::INFINITY);
        if condition > ORACLE_MAX_CONDITION {
            flat += 1;
            continue;
        }
        worst_grid = worst_grid.max(q.dist(&grid));
        done += 1;
    }
    vec![
        Check::new(
            "triangulation vs 1 cm grid search",
            worst_grid <= 0.02 && residual_ok,
            format!(
                "{cases} cases, max gap {:.2} cm; residual never above grid minimum: {residual_ok} ({flat} flat draws)",
                100.0 * worst_grid
            ),
        ),
        Check::new("triangulation exact recovery", worst_exact < 1e-6, format!("{cases} cases, max error {worst_exact:.1e} m")),
    ]
}

/// Noise-free single-path heatmap peaks and delay-offset invariance of the
/// angle marginal.
pub fn featurizer_oracle(cases: usize, seed: u64) -> Vec<Check> {
    let run = || -> Result<Vec<Check>, String> {
        let sc = Scenario::clean(8.0);
        let cfg = ChannelConfig { n_paths: 1, snr_db: f64::INFINITY, ..ChannelConfig::default() };
        let spectrum = cfg.spectrum();
        let grid = SpectrumGrid::default();
        let mut peak_ok = 0usize;
        let mut worst_bins = (0usize, 0usize);
        let mut worst_marginal: f64 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..cases {
            let s = seed.wrapping_add(i as u64);
            let pos = sample_position(&sc.arena, s);
            let frame = synthesize_csi(&pos, &sc.aps, &cfg, s).map_err(|e| e.to_string())?;
            let hm = csi_to_heatmap(&frame, &sc.aps, &spectrum, &grid).map_err(|e| e.to_string())?;
            let mut all = true;
            for (k, ap) in sc.aps.iter().enumerate() {
                let (bt, bd) = hm.argmax(k);
                let theta = ap.local_aoa(&pos);
                let tau = ap.position.dist(&pos) / crate::chansim::SPEED_OF_LIGHT + frame.tof_offsets[k];
                let et = (grid.theta[bt] - theta).abs() / grid.theta_step();
                let ed = (grid.tau[bd] - tau).abs() / grid.tau_step();
                let (et, ed) = (et.round() as usize, ed.round() as usize);
                worst_bins = (worst_bins.0.max(et), worst_bins.1.max(ed));
                all &= et <= 1 && ed <= 1;
            }
            peak_ok += all as usize;

            let paths: Vec<_> = sc.aps.iter().enumerate().map(|(k, ap)| trace_paths(&pos, ap, k, &ChannelConfig::default(), s)).collect();
            let frame_at = |offsets: &[f64]| CsiFrame {
                csi: sc.aps.iter().zip(&paths).zip(offsets).map(|((ap, p), o)| render_paths(p, ap, &spectrum, *o)).collect(),
                true_pos: pos,
                seed: s,
                tof_offsets: offsets.to_vec(),
            };
            let zero = vec![0.0; sc.aps.len()];
            let shifted: Vec<f64> = (0..sc.aps.len()).map(|_| rng.gen_range(0.0..50e-9)).collect();
            let m0 = delay_marginal(&frame_at(&zero), &sc.aps, &spectrum, &grid.theta);
            let m1 = delay_marginal(&frame_at(&shifted), &sc.aps, &spectrum, &grid.theta);
            for (a, b) in m0.iter().flatten().zip(m1.iter().flatten()) {
                worst_marginal = worst_marginal.max((a - b).abs() / a.abs().max(1e-300));
            }
        }
        Ok(vec![
            Check::new(
                "heatmap peak at (theta, tau + delta)",
                peak_ok == cases,
                format!("{peak_ok}/{cases} frames within one bin; worst offsets {worst_bins:?} bins"),
            ),
            Check::new(
                "angle marginal invariant to clock offset",
                worst_marginal < 1e-6,
                format!("{cases} frames, max rel change {worst_marginal:.1e}"),
            ),
        ])
    };
    run().unwrap_or_else(|e| vec![Check::new("featurizer oracle", false, format!("error: {e}"))])
}

/// Every oracle at full size; what `atr selftest` runs.
pub fn run_all(seed: u64) -> Vec<Check> {
    let mut checks = gradcheck_ops(20, seed);
    checks.push(gradcheck_total_loss(20, seed));
    checks.extend(attention_suite(1000, seed));
    checks.push(joint_relabel_check(100, seed));
    checks.extend(triangulation_oracle(100, seed));
    checks.extend(featurizer_oracle(200, seed));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        for c in gradcheck_ops(3, 1)
            .into_iter()
            .chain(attention_suite(10, 1))
            .chain([joint_relabel_check(3, 1), gradcheck_total_loss(3, 1)])
            .chain(featurizer_oracle(3, 1))
        {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn brute_force_finds_exact_point() {
        let arena = Arena::square(4.0);
        let aps = Scenario::clean(4.0).aps;
        let truth = Point2::new(1.23, 2.5);
        let b = BearingSet::from_point(&truth, &aps);
        let p = brute_force_triangulate(&b, &aps, &arena, 0.01);
        assert!(p.dist(&truth) < 0.01);
    }
}
