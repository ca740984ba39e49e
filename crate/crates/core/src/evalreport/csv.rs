use std::fmt::Write as _;

use super::{LocalizationReport, ReportError, TABLE_METRICS};

/// `printf("%g")`: six significant digits, trailing zeros trimmed.
pub fn fmt_g(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mant}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Headline metric rows of one report, centimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileTable {
    pub split: String,
    pub n: usize,
    pub rows: Vec<(String, f64)>,
}

impl PercentileTable {
    /// Table in metric order `Median, Mean, 90th, 95th, 99th`.
    pub fn from_values(split: impl Into<String>, n: usize, values: [f64; 5]) -> Self {
        Self { split: split.into(), n, rows: TABLE_METRICS.iter().zip(values).map(|(m, v)| (m.to_string(), v)).collect() }
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|(m, _)| m == metric).map(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value_cm,split,n\n");
        for (m, v) in &self.rows {
            let _ = writeln!(s, "{m},{},{},{}", fmt_g(*v), self.split, self.n);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self, ReportError> {
        let bad = |m: String| ReportError::Malformed(m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("metric,value_cm,split,n") {
            return Err(bad("missing `metric,value_cm,split,n` header".into()));
        }
        let mut table = Self { split: String::new(), n: 0, rows: Vec::new() };
        for (i, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(bad(format!("row {} has {} columns", i + 2, cols.len())));
            }
            let v: f64 = cols[1].parse().map_err(|_| bad(format!("row {}: bad value `{}`", i + 2, cols[1])))?;
            let n: usize = cols[3].parse().map_err(|_| bad(format!("row {}: bad count `{}`", i + 2, cols[3])))?;
            if i == 0 {
                table.split = cols[2].to_string();
                table.n = n;
            } else if cols[2] != table.split || n != table.n {
                return Err(bad(format!("row {} disagrees on split or count", i + 2)));
            }
            table.rows.push((cols[0].to_string(), v));
        }
        if table.rows.is_empty() {
            return Err(bad("no rows".into()));
        }
        Ok(table)
    }
}

pub(super) fn cdf_csv(r: &LocalizationReport) -> String {
    let mut s = String::from("error_cm,fraction\n");
    for (e, f) in r.cdf() {
        let _ = writeln!(s, "{},{}", fmt_g(100.0 * e), fmt_g(f));
    }
    s
}

/// Samples then APs, ready for a scatter plot.
pub(super) fn tiers_csv(r: &LocalizationReport) -> String {
    let mut s = String::from("kind,index,x_m,y_m,error_cm,tier\n");
    for i in 0..r.len() {
        let p = &r.truth[i];
        let _ = writeln!(
            s,
            "sample,{},{},{},{},{}",
            r.indices[i],
            fmt_g(p.x),
            fmt_g(p.y),
            fmt_g(100.0 * r.errors[i]),
            r.tiers[i].label()
        );
    }
    for (i, ap) in r.aps.iter().enumerate() {
        let _ = writeln!(s, "ap,{},{},{},,", i, fmt_g(ap.position.x), fmt_g(ap.position.y));
    }
    s
}

pub(super) fn tier_summary_csv(r: &LocalizationReport) -> String {
    let mut s = String::from("tier,count,mean_cm\n");
    for (t, n, m) in r.tier_summary() {
        let _ = writeln!(s, "{},{},{}", t.label(), n, fmt_g(100.0 * m));
    }
    s
}

/// Per-AP quartiles and mean, then the uniformity of the means.
pub(super) fn alpha_csv(r: &LocalizationReport) -> Result<Option<String>, ReportError> {
    let Some(stats) = r.per_ap_alpha() else { return Ok(None) };
    let mut s = String::from("ap,q1,median,q3,mean\n");
    for (i, a) in stats.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{},{}", i, fmt_g(a.q1), fmt_g(a.median), fmt_g(a.q3), fmt_g(a.mean));
    }
    let means: Vec<f64> = stats.iter().map(|a| a.mean).collect();
    let _ = writeln!(s, "uniformity,,,,{}", fmt_g(super::uniformity(&means)?));
    Ok(Some(s))
}
