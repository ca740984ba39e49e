//! CSI to per-AP AoA-ToF heatmaps and per-AP AoA target profiles.
//!
//! Each heatmap is the Bartlett (matched-filter) spectrum
//!
//! ```text
//! H_i(theta, tau) = | sum_{k,m} CSI_i[k,m] conj(a_m(theta)) exp(+j 2 pi f_k tau) |^2
//! a_m(theta)      = exp(-j 2 pi m d sin(theta) / lambda_c)
//! ```
//!
//! evaluated on a uniform `theta x tau` grid and max-normalized per AP.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::binio::{FormatError, LeReader, LeWriter};
use crate::chansim::{CsiFrame, CsiMatrix, Dataset, Spectrum};
use crate::geometry::{ApPose, Arena, GeometryError, Point2};

pub const FEATURES_MAGIC: &[u8; 4] = b"ATRF";
pub const FEATURES_VERSION: u32 = 1;

pub const MIN_GRID: usize = 8;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("grid too small: {0}")]
    Grid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Uniform `theta x tau` evaluation grid, both axes endpoint-inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
}

impl SpectrumGrid {
    /// `n_theta` angles over `[-pi/2, pi/2]` and `n_tau` delays over `[0, tau_max]`.
    pub fn new(n_theta: usize, n_tau: usize, tau_max: f64) -> Result<Self, FeatureError> {
        if n_theta < MIN_GRID || n_tau < MIN_GRID {
            return Err(FeatureError::Grid(format!("need >= {MIN_GRID} bins per axis, got {n_theta} x {n_tau}")));
        }
        if !(tau_max > 0.0) {
            return Err(FeatureError::Grid(format!("tau_max must be positive, got {tau_max}")));
        }
        Ok(Self { theta: theta_grid(n_theta), tau: linspace(0.0, tau_max, n_tau) })
    }

    pub fn theta_step(&self) -> f64 {
        self.theta[1] - self.theta[0]
    }

    pub fn tau_step(&self) -> f64 {
        self.tau[1] - self.tau[0]
    }

    pub fn tau_max(&self) -> f64 {
        *self.tau.last().expect("non-empty grid")
    }
}

impl Default for SpectrumGrid {
    fn default() -> Self {
        Self::new(32, 32, 200e-9).expect("valid default grid")
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// `n` angles uniform over `[-pi/2, pi/2]`, inclusive.
pub fn theta_grid(n: usize) -> Vec<f64> {
    linspace(-FRAC_PI_2, FRAC_PI_2, n)
}

/// Per-AP heatmaps `[n_ap][n_theta][n_tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub n_ap: usize,
    pub n_theta: usize,
    pub n_tau: usize,
    pub data: Vec<f64>,
    pub grid: SpectrumGrid,
}

impl HeatmapStack {
    pub fn slice(&self, ap: usize) -> &[f64] {
        let n = self.n_theta * self.n_tau;
        &self.data[ap * n..(ap + 1) * n]
    }

    pub fn at(&self, ap: usize, theta: usize, tau: usize) -> f64 {
        self.data[(ap * self.n_theta + theta) * self.n_tau + tau]
    }

    /// `(theta_bin, tau_bin)` of the slice maximum; first occurrence wins.
    pub fn argmax(&self, ap: usize) -> (usize, usize) {
        let s = self.slice(ap);
        let mut best = 0;
        for (i, v) in s.iter().enumerate() {
            if *v > s[best] {
                best = i;
            }
        }
        (best / self.n_tau, best % self.n_tau)
    }

    /// Reorders AP slices: output slice `j` is input slice `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.slice(p));
        }
        Self { data, ..self.clone() }
    }
}

/// Per-AP AoA target profiles `[n_ap][n_theta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AoaTarget {
    pub n_ap: usize,
    pub n_theta: usize,
    pub values: Vec<f64>,
}

impl AoaTarget {
    pub fn profile(&self, ap: usize) -> &[f64] {
        &self.values[ap * self.n_theta..(ap + 1) * self.n_theta]
    }
}

/// Conjugate steering rows `conj(a_m(theta))`, `[n_theta][n_ant]`.
fn steering_conj(ap: &ApPose<f64>, theta: &[f64], wavelength: f64) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(theta.len() * ap.n_antennas);
    for t in theta {
        for m in 0..ap.n_antennas {
            out.push(Complex64::from_polar(1.0, 2.0 * PI * m as f64 * ap.array_spacing * t.sin() / wavelength));
        }
    }
    out
}

/// Unnormalized Bartlett power `[n_theta][n_tau]` of one AP's matrix.
pub fn bartlett_power(csi: &CsiMatrix, ap: &ApPose<f64>, spectrum: &Spectrum, theta: &[f64], tau: &[f64]) -> Vec<f64> {
    let (n_sub, n_ant) = (csi.n_sub, csi.n_ant);
    let steer = steering_conj(ap, theta, spectrum.wavelength);
    // beamform across antennas: [n_theta][n_sub]
    let mut beam = vec![Complex64::new(0.0, 0.0); theta.len() * n_sub];
    for t in 0..theta.len() {
        let a = &steer[t * n_ant..(t + 1) * n_ant];
        for k in 0..n_sub {
            let row = &csi.data[k * n_ant..(k + 1) * n_ant];
            beam[t * n_sub + k] = row.iter().zip(a).map(|(c, s)| c * s).sum();
        }
    }
    // delay phasors: [n_sub][n_tau]
    let mut phasor = Vec::with_capacity(n_sub * tau.len());
    for f in &spectrum.freqs {
        for d in tau {
            phasor.push(Complex64::from_polar(1.0, 2.0 * PI * f * d));
        }
    }
    let mut power = vec![0.0; theta.len() * tau.len()];
    let mut acc = vec![Complex64::new(0.0, 0.0); tau.len()];
    for t in 0..theta.len() {
        acc.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        for k in 0..n_sub {
            let b = beam[t * n_sub + k];
            for (a, p) in acc.iter_mut().zip(&phasor[k * tau.len()..(k + 1) * tau.len()]) {
                *a += b * p;
            }
        }
        for (out, a) in power[t * tau.len()..(t + 1) * tau.len()].iter_mut().zip(&acc) {
            *out = a.norm_sqr();
        }
    }
    power
}

fn max_normalize(v: &mut [f64]) {
    let max = v.iter().copied().fold(0.0, f64::max);
    if max > 0.0 && max.is_finite() {
        v.iter_mut().for_each(|x| *x /= max);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Featurizes one frame into max-normalized per-AP heatmaps.
pub fn csi_to_heatmap(
    frame: &CsiFrame,
    aps: &[ApPose<f64>],
    spectrum: &Spectrum,
    grid: &SpectrumGrid,
) -> Result<HeatmapStack, FeatureError> {
    if grid.theta.len() < MIN_GRID || grid.tau.len() < MIN_GRID {
        return Err(FeatureError::Grid(format!("need >= {MIN_GRID} bins per axis")));
    }
    if frame.csi.len() != aps.len() {
        return Err(FeatureError::Dimension(format!("{} CSI matrices for {} APs", frame.csi.len(), aps.len())));
    }
    let mut data = Vec::with_capacity(aps.len() * grid.theta.len() * grid.tau.len());
    for (m, ap) in frame.csi.iter().zip(aps) {
        if m.n_sub != spectrum.freqs.len() || m.n_ant != ap.n_antennas || m.data.len() != m.n_sub * m.n_ant {
            return Err(FeatureError::Dimension(format!(
                "matrix {}x{} vs {} subcarriers x {} antennas",
                m.n_sub,
                m.n_ant,
                spectrum.freqs.len(),
                ap.n_antennas
            )));
        }
        let mut p = bartlett_power(m, ap, spectrum, &grid.theta, &grid.tau);
        max_normalize(&mut p);
        data.extend(p);
    }
    Ok(HeatmapStack { n_ap: aps.len(), n_theta: grid.theta.len(), n_tau: grid.tau.len(), data, grid: grid.clone() })
}

/// Delay-marginalized Bartlett profile per AP, summed over one full
/// unambiguous delay period `1 / subcarrier_spacing` sampled at `n_sub`
/// points. Over a full period the sum does not depend on the AP clock offset.
pub fn delay_marginal(frame: &CsiFrame, aps: &[ApPose<f64>], spectrum: &Spectrum, theta: &[f64]) -> Vec<Vec<f64>> {
    let n = spectrum.freqs.len();
    let tau: Vec<f64> = (0..n).map(|j| j as f64 * spectrum.delay_period() / n as f64).collect();
    frame
        .csi
        .iter()
        .zip(aps)
        .map(|(m, ap)| {
            let p = bartlett_power(m, ap, spectrum, theta, &tau);
            p.chunks(n).map(|row| row.iter().sum()).collect()
        })
        .collect()
}

/// Gaussian bump per AP centered at the geometric local AoA of `true_pos`.
pub fn make_aoa_target(
    true_pos: &Point2<f64>,
    aps: &[ApPose<f64>],
    arena: &Arena<f64>,
    theta: &[f64],
    sigma_theta: f64,
) -> Result<AoaTarget, FeatureError> {
    arena.check(true_pos)?;
    if !(sigma_theta > 0.0) {
        return Err(FeatureError::Grid(format!("sigma_theta must be positive, got {sigma_theta}")));
    }
    let mut values = Vec::with_capacity(aps.len() * theta.len());
    for ap in aps {
        let center = ap.local_aoa(true_pos);
        values.extend(theta.iter().map(|t| (-(t - center).powi(2) / (2.0 * sigma_theta * sigma_theta)).exp()));
    }
    Ok(AoaTarget { n_ap: aps.len(), n_theta: theta.len(), values })
}

/// Default AoA target width: three theta bins.
pub fn default_sigma_theta(grid: &SpectrumGrid) -> f64 {
    3.0 * grid.theta_step()
}

/// One featurized training example.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub true_pos: Point2<f64>,
    pub heatmaps: HeatmapStack,
    pub target: AoaTarget,
}

/// Featurized dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub arena: Arena<f64>,
    pub aps: Vec<ApPose<f64>>,
    pub grid: SpectrumGrid,
    pub sigma_theta: f64,
    pub samples: Vec<FeatureSample>,
}

impl FeatureSet {
    pub fn n_ap(&self) -> usize {
        self.aps.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Layout: magic `ATRF`, version, `n_samples, n_ap, n_theta, n_tau` (u32),
    /// `tau_max, sigma_theta` (f64), arena (4 x f64), per-AP
    /// `x, y, boresight_rad, spacing_m` (f64) and `antennas` (u32). Each record
    /// is `true_pos` (2 x f64), the heatmaps `[ap][theta][tau]` as f32 and the
    /// AoA targets `[ap][theta]` as f32. The theta axis is always
    /// `[-pi/2, pi/2]` and the tau axis starts at zero.
    pub fn write_to<W: Write>(&self, w: W) -> Result<W, FormatError> {
        let mut w = LeWriter::new(w);
        w.bytes(FEATURES_MAGIC)?;
        w.u32(FEATURES_VERSION)?;
        w.count(self.samples.len())?;
        w.count(self.aps.len())?;
        w.count(self.grid.theta.len())?;
        w.count(self.grid.tau.len())?;
        w.f64(self.grid.tau_max())?;
        w.f64(self.sigma_theta)?;
        for v in [self.arena.min.x, self.arena.min.y, self.arena.max.x, self.arena.max.y] {
            w.f64(v)?;
        }
        for ap in &self.aps {
            for v in [ap.position.x, ap.position.y, ap.boresight, ap.array_spacing] {
                w.f64(v)?;
            }
            w.count(ap.n_antennas)?;
        }
        for s in &self.samples {
            w.f64(s.true_pos.x)?;
            w.f64(s.true_pos.y)?;
            for v in &s.heatmaps.data {
                w.f32(*v as f32)?;
            }
            for v in &s.target.values {
                w.f32(*v as f32)?;
            }
        }
        Ok(w.finish()?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, FormatError> {
        let mut r = LeReader::new(r);
        r.magic(FEATURES_MAGIC)?;
        r.version("ATRF", FEATURES_VERSION)?;
        let n_samples = r.count()?;
        let n_ap = r.count()?;
        let n_theta = r.count()?;
        let n_tau = r.count()?;
        let tau_max = r.f64()?;
        let sigma_theta = r.f64()?;
        let arena = Arena::new(Point2::new(r.f64()?, r.f64()?), Point2::new(r.f64()?, r.f64()?));
        let grid = SpectrumGrid::new(n_theta, n_tau, tau_max).map_err(|e| FormatError::Malformed(e.to_string()))?;
        let mut aps = Vec::with_capacity(n_ap);
        for _ in 0..n_ap {
            let pos = Point2::new(r.f64()?, r.f64()?);
            let bore = r.f64()?;
            let spacing = r.f64()?;
            let n_ant = r.count()?;
            aps.push(ApPose::new(pos, bore, spacing, n_ant).map_err(|e| FormatError::Malformed(e.to_string()))?);
        }
        let mut samples = Vec::with_capacity(n_samples.min(1 << 16));
        for _ in 0..n_samples {
            let true_pos = Point2::new(r.f64()?, r.f64()?);
            let data = (0..n_ap * n_theta * n_tau).map(|_| r.f32().map(f64::from)).collect::<Result<_, _>>()?;
            let values = (0..n_ap * n_theta).map(|_| r.f32().map(f64::from)).collect::<Result<_, _>>()?;
            samples.push(FeatureSample {
                true_pos,
                heatmaps: HeatmapStack { n_ap, n_theta, n_tau, data, grid: grid.clone() },
                target: AoaTarget { n_ap, n_theta, values },
            });
        }
        r.expect_eof()?;
        Ok(Self { arena, aps, grid, sigma_theta, samples })
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<(), FormatError> {
        self.write_to(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self, FormatError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Featurizes every frame of `dataset` (parallel on the current rayon pool).
pub fn featurize_dataset(dataset: &Dataset, grid: &SpectrumGrid, sigma_theta: f64) -> Result<FeatureSet, FeatureError> {
    let spectrum = dataset.spectrum();
    let samples = dataset
        .frames
        .par_iter()
        .map(|frame| {
            Ok(FeatureSample {
                true_pos: frame.true_pos,
                heatmaps: csi_to_heatmap(frame, &dataset.aps, &spectrum, grid)?,
                target: make_aoa_target(&frame.true_pos, &dataset.aps, &dataset.arena, &grid.theta, sigma_theta)?,
            })
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    Ok(FeatureSet { arena: dataset.arena, aps: dataset.aps.clone(), grid: grid.clone(), sigma_theta, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chansim::{synthesize_csi, ChannelConfig, SPEED_OF_LIGHT};
    use crate::geometry::corner_layout;

    fn setup() -> (Arena<f64>, Vec<ApPose<f64>>, ChannelConfig) {
        let arena = Arena::square(8.0);
        let aps = corner_layout(&arena, SPEED_OF_LIGHT / 5e9 / 2.0, 4).unwrap();
        let cfg = ChannelConfig { n_paths: 1, snr_db: f64::INFINITY, ..Default::default() };
        (arena, aps, cfg)
    }

    #[test]
    fn zero_csi_gives_zero_slice() {
        let (_, aps, cfg) = setup();
        let frame = CsiFrame {
            csi: vec![CsiMatrix::zeros(64, 4); 4],
            true_pos: Point2::new(1.0, 1.0),
            seed: 0,
            tof_offsets: vec![],
        };
        let h = csi_to_heatmap(&frame, &aps, &cfg.spectrum(), &SpectrumGrid::default()).unwrap();
        assert!(h.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn amplitude_scale_invariant() {
        let (_, aps, cfg) = setup();
        let frame = synthesize_csi(&Point2::new(2.0, 5.0), &aps, &ChannelConfig::default(), 4).unwrap();
        let mut doubled = frame.clone();
        doubled.csi.iter_mut().for_each(|m| m.data.iter_mut().for_each(|c| *c *= 2.0));
        let grid = SpectrumGrid::default();
        let a = csi_to_heatmap(&frame, &aps, &cfg.spectrum(), &grid).unwrap();
        let b = csi_to_heatmap(&doubled, &aps, &cfg.spectrum(), &grid).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        for ap in 0..4 {
            assert!((a.slice(ap).iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_small_grid_and_bad_dims() {
        assert!(SpectrumGrid::new(7, 32, 1e-7).is_err());
        let (_, aps, cfg) = setup();
        let frame = synthesize_csi(&Point2::new(2.0, 5.0), &aps, &cfg, 4).unwrap();
        assert!(csi_to_heatmap(&frame, &aps[..3], &cfg.spectrum(), &SpectrumGrid::default()).is_err());
    }

    #[test]
    fn aoa_target_examples() {
        let (arena, aps, _) = setup();
        let theta = theta_grid(181);
        let sigma = 3.0 * (theta[1] - theta[0]);
        let t = make_aoa_target(&arena.center(), &aps, &arena, &theta, sigma).unwrap();
        for ap in 0..4 {
            let p = t.profile(ap);
            assert!((p[90] - 1.0).abs() < 1e-12, "facing AP peaks at 0");
            assert!((p[93] - (-0.5f64).exp()).abs() < 1e-12);
        }
        assert!(make_aoa_target(&Point2::new(9.0, 1.0), &aps, &arena, &theta, sigma).is_err());
    }

    #[test]
    fn aoa_target_mass_matches_quadrature() {
        let (arena, aps, _) = setup();
        let theta = theta_grid(64);
        let step = theta[1] - theta[0];
        let sigma = 3.0 * step;
        let p = Point2::new(3.0, 2.2);
        let t = make_aoa_target(&p, &aps, &arena, &theta, sigma).unwrap();
        for (ap, pose) in aps.iter().enumerate() {
            let c = pose.local_aoa(&p);
            // trapezoid over a fine grid as the oracle
            let n = 20000;
            let h = PI / n as f64;
            let integral: f64 = (0..=n)
                .map(|i| {
                    let x = -FRAC_PI_2 + i as f64 * h;
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    w * h * (-(x - c).powi(2) / (2.0 * sigma * sigma)).exp()
                })
                .sum();
            let bins: f64 = t.profile(ap).iter().sum();
            let closed = sigma * (2.0 * PI).sqrt() / step;
            assert!((integral / step - closed).abs() / closed < 0.02);
            assert!((bins - closed).abs() / closed < 0.02, "{bins} vs {closed}");
        }
    }

    #[test]
    fn features_file_round_trip() {
        let (arena, aps, cfg) = setup();
        let ds = crate::chansim::generate_dataset(2, &arena, &aps, &cfg, 5).unwrap();
        let grid = SpectrumGrid::new(16, 8, 150e-9).unwrap();
        let fs = featurize_dataset(&ds, &grid, default_sigma_theta(&grid)).unwrap();
        let bytes = fs.write_to(Vec::new()).unwrap();
        let back = FeatureSet::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.aps, fs.aps);
        assert_eq!(back.grid, fs.grid);
        assert_eq!(back.samples[1].heatmaps.data[17], fs.samples[1].heatmaps.data[17] as f32 as f64);
        assert_eq!(back.write_to(Vec::new()).unwrap(), bytes);
    }

    #[test]
    fn heatmap_permutation() {
        let (_, aps, cfg) = setup();
        let frame = synthesize_csi(&Point2::new(2.0, 5.0), &aps, &cfg, 4).unwrap();
        let h = csi_to_heatmap(&frame, &aps, &cfg.spectrum(), &SpectrumGrid::default()).unwrap();
        let p = h.permuted(&[2, 0, 3, 1]);
        assert_eq!(p.slice(0), h.slice(2));
        assert_eq!(p.slice(3), h.slice(1));
    }
}
