//! The default synthetic deployment: four corner APs in an 8 m square, with
//! AP index 3 blocked (NLoS) and received at 10 dB while the rest see 20 dB.

use crate::chansim::{ChannelConfig, ChannelError, SPEED_OF_LIGHT};
use crate::config::KvConfig;
use crate::geometry::{corner_layout, ApPose, Arena, Point2};

pub const DEFAULT_ARENA_M: f64 = 8.0;
pub const DEFAULT_ANTENNAS: usize = 4;
pub const DEGRADED_AP: usize = 3;
pub const DEGRADED_SNR_DB: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub arena: Arena<f64>,
    pub aps: Vec<ApPose<f64>>,
    pub channel: ChannelConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        let mut s = Self::clean(DEFAULT_ARENA_M);
        s.channel.nlos_aps.insert(DEGRADED_AP);
        s.channel.ap_snr_db.insert(DEGRADED_AP, DEGRADED_SNR_DB);
        s
    }
}

impl Scenario {
    /// Corner APs with half-wavelength arrays and no degraded AP.
    pub fn clean(side_m: f64) -> Self {
        let channel = ChannelConfig::default();
        let arena = Arena::square(side_m);
        let spacing = SPEED_OF_LIGHT / channel.center_freq / 2.0;
        let aps = corner_layout(&arena, spacing, DEFAULT_ANTENNAS).expect("corner layout of a valid arena");
        Self { arena, aps, channel }
    }

    /// Reads `arena.*`, `ap.N.*` and `chan.*` keys over the default scenario.
    ///
    /// `arena.size_m` gives a square; `arena.width_m`/`arena.height_m` override
    /// either side. Without `ap.N` blocks the APs sit at the arena corners.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, ChannelError> {
        let d = Self::default();
        let side: f64 = kv.get_or("arena.size_m", DEFAULT_ARENA_M)?;
        let width: f64 = kv.get_or("arena.width_m", side)?;
        let height: f64 = kv.get_or("arena.height_m", side)?;
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(ChannelError::Config("arena sides must be positive".into()));
        }
        let arena = Arena { min: Point2::new(0.0, 0.0), max: Point2::new(width, height) };
        let mut channel = ChannelConfig::from_kv(kv)?;
        if kv.raw("chan.nlos_aps").is_none() {
            channel.nlos_aps = d.channel.nlos_aps;
        }
        if kv.raw("chan.ap_snr_db").is_none() {
            channel.ap_snr_db = d.channel.ap_snr_db;
        }
        let mut aps = kv.ap_layout()?;
        if aps.is_empty() {
            let spacing = SPEED_OF_LIGHT / channel.center_freq / 2.0;
            aps = corner_layout(&arena, spacing, DEFAULT_ANTENNAS).map_err(|e| ChannelError::Config(e.to_string()))?;
        }
        if aps.len() < 2 {
            return Err(ChannelError::Config("at least two APs are required".into()));
        }
        if let Some(bad) = channel.nlos_aps.iter().chain(channel.ap_snr_db.keys()).find(|i| **i >= aps.len()) {
            return Err(ChannelError::Config(format!("AP index {bad} out of range for {} APs", aps.len())));
        }
        if aps.iter().any(|a| a.n_antennas != aps[0].n_antennas) {
            return Err(ChannelError::Config("all APs must have the same antenna count".into()));
        }
        channel.validate()?;
        Ok(Self { arena, aps, channel })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_reference_deployment() {
        let s = Scenario::default();
        assert_eq!(s.aps.len(), 4);
        assert_eq!(s.arena.width(), 8.0);
        assert!(s.channel.nlos_aps.contains(&3));
        assert_eq!(s.channel.snr_for(3), 10.0);
        assert_eq!(s.channel.snr_for(0), 20.0);
        assert!((s.aps[0].array_spacing - 0.0299792458).abs() < 1e-12);
    }

    #[test]
    fn kv_overrides_and_validation() {
        let kv = KvConfig::parse("arena.size_m = 6\nchan.nlos_aps =\nchan.ap_snr_db =\n").unwrap();
        let s = Scenario::from_kv(&kv).unwrap();
        assert_eq!(s.arena.max.x, 6.0);
        assert!(s.channel.nlos_aps.is_empty());
        assert_eq!(s.aps[2].position, Point2::new(6.0, 6.0));

        let kv = KvConfig::parse("chan.nlos_aps = 7\n").unwrap();
        assert!(Scenario::from_kv(&kv).is_err());
        let kv = KvConfig::parse("arena.size_m = -1\n").unwrap();
        assert!(Scenario::from_kv(&kv).is_err());
    }
}
