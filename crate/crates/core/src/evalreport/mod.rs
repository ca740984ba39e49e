//! Localization metrics: percentile table, CDF, difficulty tiers, attention
//! statistics and entropy uniformity, plus their CSV forms.
//!
//! Percentiles interpolate linearly between order statistics at rank
//! `p/100 * (n - 1)`, so `[1, 2, ..., 100]` has median 50.5 and 90th
//! percentile 90.1.

mod csv;

pub use csv::{fmt_g, PercentileTable};

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::featurizer::FeatureSet;
use crate::geometry::{ApPose, Point2};
use crate::scalar::Scalar;
use crate::training::{infer, Split, TrainError, Trained};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error("unknown split `{0}` (expected train, val or test)")]
    UnknownSplit(String),
    #[error("reports cover different splits: {base} vs {ours}")]
    SplitMismatch { base: String, ours: String },
    #[error("weights sum to {sum}, not 1")]
    SimplexViolation { sum: f64 },
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const TABLE_METRICS: [&str; 5] = ["Median", "Mean", "90th", "95th", "99th"];

/// Linear-interpolation percentile of ascending `sorted`, `p` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = rank - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, p)
}

/// Fixed-order sum, for reproducible means.
fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `(error, (i + 1) / n)` for ascending errors.
pub fn cdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, e)| (e, (i + 1) as f64 / n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Easy, Tier::Medium, Tier::Hard];

    pub fn label(self) -> &'static str {
        match self {
            Tier::Easy => "easy",
            Tier::Medium => "medium",
            Tier::Hard => "hard",
        }
    }
}

/// Bottom 30% easy, top 30% hard, the rest medium; ties keep sample order.
pub fn assign_tiers(errors: &[f64]) -> Vec<Tier> {
    let n = errors.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| errors[*a].total_cmp(&errors[*b]));
    let n_easy = (0.3 * n as f64).round() as usize;
    let n_hard = (0.3 * n as f64).round() as usize;
    let mut tiers = vec![Tier::Medium; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_easy {
            tiers[i] = Tier::Easy;
        } else if rank >= n - n_hard {
            tiers[i] = Tier::Hard;
        }
    }
    tiers
}

/// Normalized Shannon entropy `H(w) / ln R`, with `0 ln 0 = 0`.
pub fn uniformity(weights: &[f64]) -> Result<f64, ReportError> {
    let sum: f64 = weights.iter().sum();
    if !((sum - 1.0).abs() <= 1e-6) || weights.iter().any(|w| *w < 0.0) {
        return Err(ReportError::SimplexViolation { sum });
    }
    if weights.len() < 2 {
        return Ok(1.0);
    }
    if weights.iter().all(|w| *w == weights[0]) {
        return Ok(1.0);
    }
    let h: f64 = -weights.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>();
    Ok((h / (weights.len() as f64).ln()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean: f64,
}

impl AlphaStats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            q1: percentile_sorted(&v, 25.0),
            median: percentile_sorted(&v, 50.0),
            q3: percentile_sorted(&v, 75.0),
            mean: mean(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub split: String,
    /// Dataset indices of the evaluated samples.
    pub indices: Vec<usize>,
    pub truth: Vec<Point2<f64>>,
    pub predicted: Vec<Point2<f64>>,
    /// Euclidean errors, meters.
    pub errors: Vec<f64>,
    pub tiers: Vec<Tier>,
    /// `[sample][ap]` attention weights when the model has attention.
    pub alpha: Option<Vec<Vec<f64>>>,
    pub aps: Vec<ApPose<f64>>,
}

impl LocalizationReport {
    pub fn new(
        split: impl Into<String>,
        indices: Vec<usize>,
        truth: Vec<Point2<f64>>,
        predicted: Vec<Point2<f64>>,
        alpha: Option<Vec<Vec<f64>>>,
        aps: Vec<ApPose<f64>>,
    ) -> Result<Self, ReportError> {
        let split = split.into();
        if indices.is_empty() {
            return Err(ReportError::EmptySplit(split));
        }
        let errors: Vec<f64> = truth.iter().zip(&predicted).map(|(t, p)| t.dist(p)).collect();
        let tiers = assign_tiers(&errors);
        Ok(Self { split, indices, truth, predicted, errors, tiers, alpha, aps })
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn percentile_cm(&self, p: f64) -> f64 {
        100.0 * percentile(&self.errors, p)
    }

    pub fn mean_cm(&self) -> f64 {
        100.0 * mean(&self.errors)
    }

    /// Headline metric rows in centimeters.
    pub fn table(&self) -> PercentileTable {
        let mut sorted = self.errors.clone();
        sorted.sort_by(f64::total_cmp);
        let values = [
            percentile_sorted(&sorted, 50.0),
            mean(&self.errors),
            percentile_sorted(&sorted, 90.0),
            percentile_sorted(&sorted, 95.0),
            percentile_sorted(&sorted, 99.0),
        ];
        PercentileTable {
            split: self.split.clone(),
            n: self.len(),
            rows: TABLE_METRICS.iter().zip(values).map(|(m, v)| (m.to_string(), 100.0 * v)).collect(),
        }
    }

    pub fn cdf(&self) -> Vec<(f64, f64)> {
        cdf(&self.errors)
    }

    /// `(tier, count, mean error m)` in easy, medium, hard order.
    pub fn tier_summary(&self) -> Vec<(Tier, usize, f64)> {
        Tier::ALL
            .iter()
            .map(|&t| {
                let e: Vec<f64> = self.errors.iter().zip(&self.tiers).filter(|(_, x)| **x == t).map(|(e, _)| *e).collect();
                (t, e.len(), if e.is_empty() { f64::NAN } else { mean(&e) })
            })
            .collect()
    }

    pub fn per_ap_alpha(&self) -> Option<Vec<AlphaStats>> {
        let alpha = self.alpha.as_ref()?;
        let r = self.aps.len();
        Some((0..r).map(|ap| AlphaStats::of(&alpha.iter().map(|a| a[ap]).collect::<Vec<_>>())).collect())
    }

    /// Mean attention weight per AP.
    pub fn mean_alpha(&self) -> Option<Vec<f64>> {
        self.per_ap_alpha().map(|s| s.into_iter().map(|a| a.mean).collect())
    }

    pub fn uniformity(&self) -> Option<Result<f64, ReportError>> {
        self.mean_alpha().map(|m| uniformity(&m))
    }

    /// Writes `report.csv`, `cdf.csv`, `tiers.csv`, `tier_summary.csv` and,
    /// with attention, `alpha_stats.csv`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), ReportError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.table().to_csv())?;
        std::fs::write(dir.join("cdf.csv"), csv::cdf_csv(self))?;
        std::fs::write(dir.join("tiers.csv"), csv::tiers_csv(self))?;
        std::fs::write(dir.join("tier_summary.csv"), csv::tier_summary_csv(self))?;
        if let Some(text) = csv::alpha_csv(self)? {
            std::fs::write(dir.join("alpha_stats.csv"), text)?;
        }
        Ok(())
    }
}

/// Runs `trained` over one split of `fs` and scores it.
pub fn evaluate<S: Scalar>(trained: &Trained<S>, fs: &FeatureSet, split: &str) -> Result<LocalizationReport, ReportError> {
    let parts = Split::new(fs.samples.len(), trained.split_seed);
    let indices = parts.get(split).ok_or_else(|| ReportError::UnknownSplit(split.to_string()))?.to_vec();
    if indices.is_empty() {
        return Err(ReportError::EmptySplit(split.to_string()));
    }
    let preds = infer(&trained.model, fs, &indices)?;
    let truth = indices.iter().map(|&i| fs.samples[i].true_pos).collect();
    let predicted = preds.iter().map(|p| Point2::new(p.position.x.as_f64(), p.position.y.as_f64())).collect();
    let alpha = trained
        .model
        .config
        .attention_enabled
        .then(|| {
            preds
                .iter()
                .map(|p| p.output.attention.as_ref().map(|a| a.alpha.iter().map(|v| v.as_f64()).collect()))
                .collect::<Option<Vec<Vec<f64>>>>()
        })
        .flatten();
    LocalizationReport::new(split, indices, truth, predicted, alpha, fs.aps.clone())
}

/// One row of a baseline/ours comparison, centimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub metric: String,
    pub base: f64,
    pub ours: f64,
    /// `(base - ours) / base * 100`.
    pub delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub split: String,
    pub n: usize,
    pub rows: Vec<ComparisonRow>,
}

pub fn delta_pct(base: f64, ours: f64) -> f64 {
    if base == ours {
        0.0
    } else {
        (base - ours) / base * 100.0
    }
}

pub fn compare(base: &PercentileTable, ours: &PercentileTable) -> Result<ComparisonReport, ReportError> {
    if base.split != ours.split || base.n != ours.n {
        return Err(ReportError::SplitMismatch {
            base: format!("{} (n={})", base.split, base.n),
            ours: format!("{} (n={})", ours.split, ours.n),
        });
    }
    let rows = base
        .rows
        .iter()
        .map(|(metric, b)| {
            let o = ours
                .get(metric)
                .ok_or_else(|| ReportError::Malformed(format!("metric `{metric}` missing from the second report")))?;
            Ok(ComparisonRow { metric: metric.clone(), base: *b, ours: o, delta_pct: delta_pct(*b, o) })
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    Ok(ComparisonReport { split: base.split.clone(), n: base.n, rows })
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,base_cm,ours_cm,delta_pct,split,n\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.metric,
                fmt_g(r.base),
                fmt_g(r.ours),
                fmt_g(r.delta_pct),
                self.split,
                self.n
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests;
