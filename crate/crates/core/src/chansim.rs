//! Synthetic OFDM CSI with multipath, NLoS, per-AP ToF offsets and AWGN.
//!
//! Signal model (narrowband far-field, uniform linear array), per AP `i`:
//!
//! ```text
//! CSI[k, m] = sum_p g_p * exp(-j 2 pi f_k (tau_p + delta_i))
//!                       * exp(-j 2 pi m d sin(theta_p) / lambda_c) + noise
//! ```
//!
//! Path 0 is the direct path. Reflected paths bounce off a random virtual
//! scatterer near the client, so their delay always exceeds the direct delay.
//! APs listed in `nlos_aps` lose the direct path.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::binio::{FormatError, LeReader, LeWriter};
use crate::config::{ConfigError, KvConfig};
use crate::geometry::{ApPose, Arena, Point2};
use crate::rng::{sample_seed, substream, StreamKind};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub const DATASET_MAGIC: &[u8; 4] = b"ATRD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("channel config: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Kv(#[from] ConfigError),
}

impl From<std::io::Error> for ChannelError {
    fn from(e: std::io::Error) -> Self {
        Self::Format(e.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub n_subcarriers: usize,
    /// Hz.
    pub center_freq: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Paths per AP including the direct path.
    pub n_paths: usize,
    /// dB per bounce.
    pub reflection_atten_db: f64,
    /// dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Per-AP offsets are drawn from `U[0, tof_offset_max]` seconds, per frame.
    pub tof_offset_max: f64,
    /// AP indices (0-based) whose direct path is blocked.
    pub nlos_aps: BTreeSet<usize>,
    /// Per-AP SNR overrides, dB.
    pub ap_snr_db: BTreeMap<usize, f64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            center_freq: 5e9,
            bandwidth: 80e6,
            n_paths: 3,
            reflection_atten_db: 6.0,
            snr_db: 20.0,
            tof_offset_max: 50e-9,
            nlos_aps: BTreeSet::new(),
            ap_snr_db: BTreeMap::new(),
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let fail = |m: String| Err(ChannelError::Config(m));
        if self.n_subcarriers < 2 {
            return fail(format!("n_subcarriers must be >= 2, got {}", self.n_subcarriers));
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return fail(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        if !(self.center_freq > self.bandwidth / 2.0) || !self.center_freq.is_finite() {
            return fail(format!("center_freq must exceed half the bandwidth, got {}", self.center_freq));
        }
        if self.n_paths < 1 {
            return fail("n_paths must be >= 1".into());
        }
        if !(self.reflection_atten_db >= 0.0) || !self.reflection_atten_db.is_finite() {
            return fail(format!("reflection_atten_db must be >= 0, got {}", self.reflection_atten_db));
        }
        for snr in std::iter::once(&self.snr_db).chain(self.ap_snr_db.values()) {
            if snr.is_nan() || *snr == f64::NEG_INFINITY {
                return fail(format!("snr_db must be finite or +inf, got {snr}"));
            }
        }
        if !(self.tof_offset_max >= 0.0) || !self.tof_offset_max.is_finite() {
            return fail(format!("tof_offset_max must be >= 0, got {}", self.tof_offset_max));
        }
        Ok(())
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum::new(self.center_freq, self.bandwidth, self.n_subcarriers)
    }

    pub fn snr_for(&self, ap: usize) -> f64 {
        self.ap_snr_db.get(&ap).copied().unwrap_or(self.snr_db)
    }

    /// Reads `chan.*` keys over the defaults. `chan.nlos_aps` is a comma list of
    /// 0-based AP indices; `chan.ap_snr_db` is a comma list of `index:dB` pairs.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, ChannelError> {
        let d = Self::default();
        let mut cfg = Self {
            n_subcarriers: kv.get_or("chan.n_subcarriers", d.n_subcarriers)?,
            center_freq: kv.get_or("chan.center_freq_hz", d.center_freq)?,
            bandwidth: kv.get_or("chan.bandwidth_hz", d.bandwidth)?,
            n_paths: kv.get_or("chan.n_paths", d.n_paths)?,
            reflection_atten_db: kv.get_or("chan.reflection_atten_db", d.reflection_atten_db)?,
            snr_db: kv.get_or("chan.snr_db", d.snr_db)?,
            tof_offset_max: kv.get::<f64>("chan.tof_offset_max_ns")?.map_or(d.tof_offset_max, |ns| ns * 1e-9),
            nlos_aps: BTreeSet::new(),
            ap_snr_db: BTreeMap::new(),
        };
        if let Some(list) = kv.raw("chan.nlos_aps") {
            for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let i = tok
                    .parse()
                    .map_err(|_| ChannelError::Config(format!("chan.nlos_aps: bad index `{tok}`")))?;
                cfg.nlos_aps.insert(i);
            }
        }
        if let Some(list) = kv.raw("chan.ap_snr_db") {
            for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let parsed = tok
                    .split_once(':')
                    .and_then(|(i, v)| Some((i.trim().parse().ok()?, v.trim().parse().ok()?)));
                let (i, v) =
                    parsed.ok_or_else(|| ChannelError::Config(format!("chan.ap_snr_db: bad entry `{tok}`")))?;
                cfg.ap_snr_db.insert(i, v);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Subcarrier frequencies and carrier wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Absolute subcarrier frequencies, Hz, centered on the carrier.
    pub freqs: Vec<f64>,
    pub wavelength: f64,
    pub spacing: f64,
}

impl Spectrum {
    pub fn new(center_freq: f64, bandwidth: f64, n_sub: usize) -> Self {
        let spacing = bandwidth / n_sub as f64;
        let mid = (n_sub as f64 - 1.0) / 2.0;
        let freqs = (0..n_sub).map(|k| center_freq + (k as f64 - mid) * spacing).collect();
        Self { freqs, wavelength: SPEED_OF_LIGHT / center_freq, spacing }
    }

    /// Unambiguous delay span `1 / spacing`, seconds.
    pub fn delay_period(&self) -> f64 {
        1.0 / self.spacing
    }
}

/// One propagation path as seen by an AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    /// Local AoA, radians.
    pub aoa: f64,
    /// Propagation delay excluding the AP clock offset, seconds.
    pub delay: f64,
    pub gain: Complex64,
    pub direct: bool,
}

/// Complex channel matrix `[n_sub][n_ant]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMatrix {
    pub n_sub: usize,
    pub n_ant: usize,
    pub data: Vec<Complex64>,
}

impl CsiMatrix {
    pub fn zeros(n_sub: usize, n_ant: usize) -> Self {
        Self { n_sub, n_ant, data: vec![Complex64::new(0.0, 0.0); n_sub * n_ant] }
    }

    pub fn at(&self, k: usize, m: usize) -> Complex64 {
        self.data[k * self.n_ant + m]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    pub csi: Vec<CsiMatrix>,
    pub true_pos: Point2<f64>,
    pub seed: u64,
    /// Per-AP clock offsets used for this frame; empty when loaded from disk.
    pub tof_offsets: Vec<f64>,
}

fn local_aoa_valid(ap: &ApPose<f64>, p: &Point2<f64>) -> bool {
    ap.local_aoa(p).abs() < FRAC_PI_2 && ap.position.dist(p) > 0.1
}

/// Geometric paths from `true_pos` to AP `ap_index`, seeded per (AP, path).
pub fn trace_paths(true_pos: &Point2<f64>, ap: &ApPose<f64>, ap_index: usize, cfg: &ChannelConfig, seed: u64) -> Vec<PathComponent> {
    let d0 = ap.position.dist(true_pos);
    let mut paths = Vec::with_capacity(cfg.n_paths);
    if !cfg.nlos_aps.contains(&ap_index) {
        let mut rng = substream(seed, StreamKind::Path, ap_index, 0);
        paths.push(PathComponent {
            aoa: ap.local_aoa(true_pos),
            delay: d0 / SPEED_OF_LIGHT,
            gain: Complex64::from_polar(1.0 / d0.max(0.1), rng.gen_range(0.0..2.0 * PI)),
            direct: true,
        });
    }
    for p in 1..cfg.n_paths {
        let mut rng = substream(seed, StreamKind::Path, ap_index, p);
        let mut scatter = *true_pos;
        let mut length = f64::INFINITY;
        for _ in 0..256 {
            let r = rng.gen_range(0.5..4.0);
            let psi = rng.gen_range(-PI..PI);
            let s = Point2::new(true_pos.x + r * psi.cos(), true_pos.y + r * psi.sin());
            let l = ap.position.dist(&s) + s.dist(true_pos);
            if local_aoa_valid(ap, &s) && l > d0 + 1e-3 {
                scatter = s;
                length = l;
                break;
            }
        }
        if !length.is_finite() {
            // No admissible scatterer found; fall back to a delayed copy along the direct bearing.
            length = d0 + 1.0;
        }
        let atten = 10f64.powf(-cfg.reflection_atten_db * p as f64 / 20.0);
        paths.push(PathComponent {
            aoa: if scatter == *true_pos { ap.local_aoa(true_pos) } else { ap.local_aoa(&scatter) },
            delay: length / SPEED_OF_LIGHT,
            gain: Complex64::from_polar(atten / length, rng.gen_range(0.0..2.0 * PI)),
            direct: false,
        });
    }
    paths
}

/// Fraction of path energy carried by the direct path.
pub fn direct_energy_fraction(paths: &[PathComponent]) -> f64 {
    let total: f64 = paths.iter().map(|p| p.gain.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    paths.iter().filter(|p| p.direct).map(|p| p.gain.norm_sqr()).sum::<f64>() / total
}

/// Noise-free channel matrix for a set of paths and a clock offset.
pub fn render_paths(paths: &[PathComponent], ap: &ApPose<f64>, spectrum: &Spectrum, offset: f64) -> CsiMatrix {
    let n_sub = spectrum.freqs.len();
    let n_ant = ap.n_antennas;
    let mut out = CsiMatrix::zeros(n_sub, n_ant);
    for path in paths {
        let steer: Vec<Complex64> = (0..n_ant)
            .map(|m| {
                Complex64::from_polar(
                    1.0,
                    -2.0 * PI * m as f64 * ap.array_spacing * path.aoa.sin() / spectrum.wavelength,
                )
            })
            .collect();
        for (k, f) in spectrum.freqs.iter().enumerate() {
            let delay = path.gain * Complex64::from_polar(1.0, -2.0 * PI * f * (path.delay + offset));
            for (m, s) in steer.iter().enumerate() {
                out.data[k * n_ant + m] += delay * s;
            }
        }
    }
    out
}

/// Simulates one CSI frame; the result is a pure function of the arguments.
pub fn synthesize_csi(
    true_pos: &Point2<f64>,
    aps: &[ApPose<f64>],
    cfg: &ChannelConfig,
    seed: u64,
) -> Result<CsiFrame, ChannelError> {
    cfg.validate()?;
    if aps.is_empty() {
        return Err(ChannelError::Config("at least one AP is required".into()));
    }
    if aps.iter().any(|ap| ap.n_antennas != aps[0].n_antennas) {
        return Err(ChannelError::Config("all APs must have the same number of antennas".into()));
    }
    if !true_pos.x.is_finite() || !true_pos.y.is_finite() {
        return Err(ChannelError::Config("non-finite client position".into()));
    }
    let spectrum = cfg.spectrum();
    let mut csi = Vec::with_capacity(aps.len());
    let mut tof_offsets = Vec::with_capacity(aps.len());
    for (i, ap) in aps.iter().enumerate() {
        let offset = if cfg.tof_offset_max > 0.0 {
            substream(seed, StreamKind::TofOffset, i, 0).gen_range(0.0..=cfg.tof_offset_max)
        } else {
            0.0
        };
        let paths = trace_paths(true_pos, ap, i, cfg, seed);
        let mut m = render_paths(&paths, ap, &spectrum, offset);
        let snr = cfg.snr_for(i);
        if snr.is_finite() {
            let power = m.energy() / m.data.len() as f64;
            let std = (power / 10f64.powf(snr / 10.0) / 2.0).sqrt();
            let mut rng = substream(seed, StreamKind::Noise, i, 0);
            for c in &mut m.data {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *c += Complex64::new(re * std, im * std);
            }
        }
        tof_offsets.push(offset);
        csi.push(m);
    }
    Ok(CsiFrame { csi, true_pos: *true_pos, seed, tof_offsets })
}

/// Simulated measurement set with everything needed to featurize it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub arena: Arena<f64>,
    pub aps: Vec<ApPose<f64>>,
    pub center_freq: f64,
    pub bandwidth: f64,
    pub n_sub: usize,
    pub n_ant: usize,
    /// Base seed; frame `i` uses `seed ^ i`.
    pub seed: u64,
    pub frames: Vec<CsiFrame>,
}

impl Dataset {
    pub fn spectrum(&self) -> Spectrum {
        Spectrum::new(self.center_freq, self.bandwidth, self.n_sub)
    }

    pub fn positions(&self) -> Vec<Point2<f64>> {
        self.frames.iter().map(|f| f.true_pos).collect()
    }

    /// Layout: magic `ATRD`, version, `n_samples, n_ap, n_sub, n_ant` (u32),
    /// arena `x_min, y_min, x_max, y_max` (f64), then center frequency and
    /// bandwidth (f64), base seed (u64) and per-AP `x, y, boresight_rad,
    /// spacing_m` (f64). Each record is `true_pos` (2 x f64) followed by the
    /// per-AP matrices as interleaved `(re, im)` f32, row-major
    /// `[subcarrier][antenna]`.
    pub fn write_to<W: Write>(&self, w: W) -> Result<W, FormatError> {
        let mut w = LeWriter::new(w);
        w.bytes(DATASET_MAGIC)?;
        w.u32(DATASET_VERSION)?;
        w.count(self.frames.len())?;
        w.count(self.aps.len())?;
        w.count(self.n_sub)?;
        w.count(self.n_ant)?;
        for v in [self.arena.min.x, self.arena.min.y, self.arena.max.x, self.arena.max.y] {
            w.f64(v)?;
        }
        w.f64(self.center_freq)?;
        w.f64(self.bandwidth)?;
        w.u64(self.seed)?;
        for ap in &self.aps {
            for v in [ap.position.x, ap.position.y, ap.boresight, ap.array_spacing] {
                w.f64(v)?;
            }
        }
        for frame in &self.frames {
            w.f64(frame.true_pos.x)?;
            w.f64(frame.true_pos.y)?;
            for m in &frame.csi {
                if m.n_sub != self.n_sub || m.n_ant != self.n_ant {
                    return Err(FormatError::Malformed("frame dimensions differ from header".into()));
                }
                for c in &m.data {
                    w.f32(c.re as f32)?;
                    w.f32(c.im as f32)?;
                }
            }
        }
        Ok(w.finish()?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, FormatError> {
        let mut r = LeReader::new(r);
        r.magic(DATASET_MAGIC)?;
        r.version("ATRD", DATASET_VERSION)?;
        let n_samples = r.count()?;
        let n_ap = r.count()?;
        let n_sub = r.count()?;
        let n_ant = r.count()?;
        let arena = Arena::new(Point2::new(r.f64()?, r.f64()?), Point2::new(r.f64()?, r.f64()?));
        let center_freq = r.f64()?;
        let bandwidth = r.f64()?;
        let seed = r.u64()?;
        let mut aps = Vec::with_capacity(n_ap);
        for _ in 0..n_ap {
            let pos = Point2::new(r.f64()?, r.f64()?);
            let bore = r.f64()?;
            let spacing = r.f64()?;
            aps.push(ApPose::new(pos, bore, spacing, n_ant).map_err(|e| FormatError::Malformed(e.to_string()))?);
        }
        let mut frames = Vec::with_capacity(n_samples.min(1 << 16));
        for i in 0..n_samples {
            let true_pos = Point2::new(r.f64()?, r.f64()?);
            let mut csi = Vec::with_capacity(n_ap);
            for _ in 0..n_ap {
                let mut m = CsiMatrix::zeros(n_sub, n_ant);
                for c in &mut m.data {
                    *c = Complex64::new(r.f32()? as f64, r.f32()? as f64);
                }
                csi.push(m);
            }
            frames.push(CsiFrame { csi, true_pos, seed: sample_seed(seed, i), tof_offsets: Vec::new() });
        }
        r.expect_eof()?;
        Ok(Self { arena, aps, center_freq, bandwidth, n_sub, n_ant, seed, frames })
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<(), FormatError> {
        self.write_to(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self, FormatError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Uniform client position in `arena` for dataset sample seed `seed`.
pub fn sample_position(arena: &Arena<f64>, seed: u64) -> Point2<f64> {
    let mut rng = substream(seed, StreamKind::Position, 0, 0);
    Point2::new(rng.gen_range(arena.min.x..arena.max.x), rng.gen_range(arena.min.y..arena.max.y))
}

/// Simulates `n_samples` frames at uniform positions. Frames are generated in
/// parallel on the current rayon pool; the output is order-independent.
pub fn generate_dataset(
    n_samples: usize,
    arena: &Arena<f64>,
    aps: &[ApPose<f64>],
    cfg: &ChannelConfig,
    seed: u64,
) -> Result<Dataset, ChannelError> {
    if n_samples == 0 {
        return Err(ChannelError::Config("n_samples must be >= 1".into()));
    }
    if !(arena.width() > 0.0 && arena.height() > 0.0) {
        return Err(ChannelError::Config("arena must have positive extent".into()));
    }
    cfg.validate()?;
    let frames = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let s = sample_seed(seed, i);
            synthesize_csi(&sample_position(arena, s), aps, cfg, s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        arena: *arena,
        aps: aps.to_vec(),
        center_freq: cfg.center_freq,
        bandwidth: cfg.bandwidth,
        n_sub: cfg.n_subcarriers,
        n_ant: aps[0].n_antennas,
        seed,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::corner_layout;

    fn layout() -> (Arena<f64>, Vec<ApPose<f64>>) {
        let arena = Arena::square(8.0);
        let spacing = SPEED_OF_LIGHT / 5e9 / 2.0;
        (arena, corner_layout(&arena, spacing, 4).unwrap())
    }

    fn single_path() -> ChannelConfig {
        ChannelConfig { n_paths: 1, snr_db: f64::INFINITY, tof_offset_max: 0.0, ..Default::default() }
    }

    #[test]
    fn single_path_subcarrier_phase_slope() {
        let (_, aps) = layout();
        let cfg = single_path();
        let pos = Point2::new(3.1, 5.2);
        let frame = synthesize_csi(&pos, &aps, &cfg, 9).unwrap();
        let spec = cfg.spectrum();
        for (ap, m) in aps.iter().zip(&frame.csi) {
            let tau0 = ap.position.dist(&pos) / SPEED_OF_LIGHT;
            let expected = -2.0 * PI * spec.spacing * tau0;
            for k in 0..cfg.n_subcarriers - 1 {
                let d = (m.at(k + 1, 0) * m.at(k, 0).conj()).arg();
                let diff = crate::scalar::wrap_angle(d - expected);
                assert!(diff.abs() < 1e-9, "k={k}: {d} vs {expected}");
            }
        }
    }

    #[test]
    fn single_path_antenna_phase_matches_geometry() {
        let (_, aps) = layout();
        let cfg = single_path();
        let pos = Point2::new(6.3, 1.7);
        let frame = synthesize_csi(&pos, &aps, &cfg, 3).unwrap();
        let lambda = cfg.spectrum().wavelength;
        for (ap, m) in aps.iter().zip(&frame.csi) {
            let theta = ap.local_aoa(&pos);
            let expected = -2.0 * PI * ap.array_spacing * theta.sin() / lambda;
            for k in [0, 31, 63] {
                for a in 0..3 {
                    let d = (m.at(k, a + 1) * m.at(k, a).conj()).arg();
                    assert!(crate::scalar::wrap_angle(d - expected).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (_, aps) = layout();
        let cfg = ChannelConfig::default();
        let p = Point2::new(2.0, 2.5);
        let a = synthesize_csi(&p, &aps, &cfg, 77).unwrap();
        let b = synthesize_csi(&p, &aps, &cfg, 77).unwrap();
        assert_eq!(a, b);
        let c = synthesize_csi(&p, &aps, &cfg, 78).unwrap();
        assert_ne!(a.csi, c.csi);
    }

    #[test]
    fn reflections_arrive_later() {
        let (_, aps) = layout();
        let cfg = ChannelConfig { n_paths: 5, ..Default::default() };
        for s in 0..50u64 {
            let p = sample_position(&Arena::square(8.0), s);
            for (i, ap) in aps.iter().enumerate() {
                let paths = trace_paths(&p, ap, i, &cfg, s);
                assert!(paths[0].direct);
                assert!(paths[1..].iter().all(|q| q.delay > paths[0].delay && !q.direct));
            }
        }
    }

    #[test]
    fn offsets_do_not_change_energy() {
        let (_, aps) = layout();
        let cfg = ChannelConfig::default();
        let spec = cfg.spectrum();
        let p = Point2::new(4.4, 6.1);
        let paths = trace_paths(&p, &aps[1], 1, &cfg, 5);
        let e0 = render_paths(&paths, &aps[1], &spec, 0.0).energy();
        let e1 = render_paths(&paths, &aps[1], &spec, 37e-9).energy();
        assert!((e0 - e1).abs() / e0 < 1e-12);
    }

    #[test]
    fn nlos_removes_direct_energy() {
        let (_, aps) = layout();
        let mut cfg = ChannelConfig::default();
        let p = Point2::new(1.0, 6.0);
        let los = direct_energy_fraction(&trace_paths(&p, &aps[2], 2, &cfg, 1));
        cfg.nlos_aps.insert(2);
        let nlos = direct_energy_fraction(&trace_paths(&p, &aps[2], 2, &cfg, 1));
        assert_eq!(nlos, 0.0);
        assert!(los > nlos);
    }

    #[test]
    fn config_validation() {
        let bad = ChannelConfig { n_subcarriers: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ChannelConfig { snr_db: f64::NAN, ..Default::default() };
        assert!(bad.validate().is_err());
        let (arena, aps) = layout();
        assert!(generate_dataset(0, &arena, &aps, &ChannelConfig::default(), 1).is_err());
        let mut mixed = aps.clone();
        mixed[0].n_antennas = 3;
        assert!(synthesize_csi(&Point2::new(1.0, 1.0), &mixed, &ChannelConfig::default(), 0).is_err());
    }

    #[test]
    fn kv_overrides() {
        let kv = KvConfig::parse("chan.snr_db = 15\nchan.nlos_aps = 3\nchan.ap_snr_db = 3:10, 1:25\nchan.tof_offset_max_ns = 20").unwrap();
        let cfg = ChannelConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.snr_db, 15.0);
        assert!(cfg.nlos_aps.contains(&3));
        assert_eq!(cfg.snr_for(3), 10.0);
        assert_eq!(cfg.snr_for(0), 15.0);
        assert!((cfg.tof_offset_max - 20e-9).abs() < 1e-20);
    }

    #[test]
    fn dataset_file_reloads() {
        let (arena, aps) = layout();
        let ds = generate_dataset(3, &arena, &aps, &ChannelConfig::default(), 11).unwrap();
        let bytes = ds.write_to(Vec::new()).unwrap();
        assert_eq!(&bytes[..4], b"ATRD");
        let back = Dataset::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.aps, ds.aps);
        assert_eq!(back.frames[2].true_pos, ds.frames[2].true_pos);
        assert_eq!(back.frames[2].seed, ds.frames[2].seed);
        let c = back.frames[1].csi[3].at(5, 2);
        let o = ds.frames[1].csi[3].at(5, 2);
        assert_eq!(c.re, o.re as f32 as f64);
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(Dataset::read_from(truncated.as_slice()).is_err());
        let mut wrong = bytes;
        wrong[0] = b'X';
        assert!(matches!(Dataset::read_from(wrong.as_slice()), Err(FormatError::BadMagic { .. })));
    }
}
