//! Flat `section.key = value` configuration files.
//!
//! Lines starting with `#` are comments; trailing `# ...` comments are stripped.
//! Later assignments of the same key win.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{ApPose, GeometryError, Point2};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("key `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                msg: format!("expected `section.key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if !key.contains('.') || key.starts_with('.') || key.ends_with('.') || key.contains(char::is_whitespace) {
                return Err(ConfigError::Parse { line: i + 1, msg: format!("malformed key `{key}`") });
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e: T::Err| ConfigError::Invalid { key: key.to_string(), msg: e.to_string() }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    /// Boolean values accept `on/off`, `true/false`, `yes/no`, `1/0`.
    pub fn get_flag(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse_flag(v)
                .map(Some)
                .ok_or_else(|| ConfigError::Invalid { key: key.into(), msg: format!("not a flag: `{v}`") }),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Copies every entry of `other` over `self`.
    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Reads the AP layout blocks `ap.N.{x,y,boresight_deg,spacing_m,antennas}`,
    /// ordered by `N`.
    pub fn ap_layout(&self) -> Result<Vec<ApPose<f64>>, ConfigError> {
        let mut ids: Vec<usize> = Vec::new();
        for key in self.keys() {
            if let Some(rest) = key.strip_prefix("ap.") {
                let id = rest.split('.').next().unwrap_or("");
                let id: usize = id
                    .parse()
                    .map_err(|_| ConfigError::Invalid { key: key.into(), msg: "AP index must be an integer".into() })?;
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        ids.into_iter()
            .map(|n| {
                let x = self.require(&format!("ap.{n}.x"))?;
                let y = self.require(&format!("ap.{n}.y"))?;
                let bore: f64 = self.require(&format!("ap.{n}.boresight_deg"))?;
                let spacing = self.require(&format!("ap.{n}.spacing_m"))?;
                let antennas = self.require(&format!("ap.{n}.antennas"))?;
                Ok(ApPose::new(Point2::new(x, y), bore.to_radians(), spacing, antennas)?)
            })
            .collect()
    }

    /// Writes `aps` as `ap.1 ... ap.R` blocks.
    pub fn set_ap_layout(&mut self, aps: &[ApPose<f64>]) {
        self.entries.retain(|k, _| !k.starts_with("ap."));
        for (i, ap) in aps.iter().enumerate() {
            let n = i + 1;
            self.set(format!("ap.{n}.x"), ap.position.x);
            self.set(format!("ap.{n}.y"), ap.position.y);
            self.set(format!("ap.{n}.boresight_deg"), ap.boresight.to_degrees());
            self.set(format!("ap.{n}.spacing_m"), ap.array_spacing);
            self.set(format!("ap.{n}.antennas"), ap.n_antennas);
        }
    }
}

pub fn parse_flag(v: &str) -> Option<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

impl fmt::Display for KvConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = KvConfig::parse("# header\ntrain.lr = 0.01 # fast\n\ntrain.lr=0.002\nmodel.attention = on\n").unwrap();
        assert_eq!(cfg.get::<f64>("train.lr").unwrap(), Some(0.002));
        assert_eq!(cfg.get_flag("model.attention").unwrap(), Some(true));
        assert_eq!(cfg.get::<f64>("train.epochs").unwrap(), None);
        assert!(matches!(cfg.get::<usize>("train.lr"), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(KvConfig::parse("just words"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(KvConfig::parse("a.b=1\nnodot = 3"), Err(ConfigError::Parse { line: 2, .. })));
    }

    #[test]
    fn ap_layout_round_trip() {
        let text = "ap.2.x = 8\nap.2.y = 0\nap.2.boresight_deg = 135\nap.2.spacing_m = 0.03\nap.2.antennas = 4\n\
                    ap.1.x = 0\nap.1.y = 0\nap.1.boresight_deg = 45\nap.1.spacing_m = 0.03\nap.1.antennas = 4\n";
        let aps = KvConfig::parse(text).unwrap().ap_layout().unwrap();
        assert_eq!(aps.len(), 2);
        assert_eq!(aps[0].position.x, 0.0);
        assert!((aps[1].boresight - 135f64.to_radians()).abs() < 1e-15);

        let mut out = KvConfig::new();
        out.set_ap_layout(&aps);
        let again = KvConfig::parse(&out.to_string()).unwrap().ap_layout().unwrap();
        assert_eq!(again, aps);
    }

    #[test]
    fn incomplete_ap_block_is_an_error() {
        let cfg = KvConfig::parse("ap.1.x = 0\nap.1.y = 0").unwrap();
        assert!(matches!(cfg.ap_layout(), Err(ConfigError::Missing(k)) if k == "ap.1.boresight_deg"));
    }
}
