//! Simulation parameters, validation and the subchannel index algebra.
//!
//! Every tunable lives in [`SimConfig`]. A config is only usable by the rest
//! of the crate after it has passed [`SimConfig::validate`], which yields an
//! immutable [`ValidatedConfig`] that can be shared freely between runs.

use std::fmt;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// All simulation parameters. Omitted keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Time divisions per CAM period (1 ms subframes).
    pub num_subframes: usize,
    /// Sub-bands per subframe.
    pub num_subbands: usize,
    pub rbs_per_subchannel: usize,
    pub cam_rate_hz: f64,
    pub tx_power_dbm: f64,
    pub antenna_gain_tx_db: f64,
    pub antenna_gain_rx_db: f64,
    pub sinr_threshold_db: f64,
    /// Reservation lifetime bounds in seconds, `[min, max]`.
    pub sps_period_range_s: [f64; 2],
    pub shadow_std_db: f64,
    pub shadow_corr_dist_m: f64,
    pub noise_figure_db: f64,
    /// Log-distance exponent. The default suits a dense freeway where
    /// far links are both attenuated and noise-limited.
    pub pathloss_exponent: f64,
    pub pathloss_ref_dist_m: f64,
    pub carrier_freq_hz: f64,
    pub road_length_m: f64,
    pub num_lanes: usize,
    pub lane_width_m: f64,
    pub speed_mps: f64,
    pub num_vehicles: usize,
    pub sim_duration_ms: u64,
    pub prr_bin_centers_m: Vec<f64>,
    pub prr_bin_halfwidth_m: f64,
    pub mode4_rsrp_threshold_init_dbm: f64,
    pub mode4_threshold_step_db: f64,
    pub mode4_candidate_fraction: f64,
    /// Probability of keeping the current resource when a mode-4 reservation
    /// expires. Zero means every expiry triggers a fresh selection.
    pub mode4_keep_probability: f64,
    pub sensing_window_ms: u64,
    /// Interval at which the eNodeB serves pending mode-3 requests as one
    /// batch. Vehicles keep their expired reservation until served.
    pub mode3_batch_period_ms: u64,
    pub ci_z_score: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_subframes: 100,
            num_subbands: 3,
            rbs_per_subchannel: 30,
            cam_rate_hz: 10.0,
            tx_power_dbm: 23.0,
            antenna_gain_tx_db: 3.0,
            antenna_gain_rx_db: 3.0,
            sinr_threshold_db: 3.98,
            sps_period_range_s: [0.5, 1.5],
            shadow_std_db: 7.0,
            shadow_corr_dist_m: 10.0,
            noise_figure_db: 4.0,
            pathloss_exponent: 4.0,
            pathloss_ref_dist_m: 10.0,
            carrier_freq_hz: 5.9e9,
            road_length_m: 5000.0,
            num_lanes: 6,
            lane_width_m: 4.0,
            speed_mps: 27.78,
            num_vehicles: 600,
            sim_duration_ms: 40_000,
            prr_bin_centers_m: vec![50.0, 100.0, 150.0, 200.0, 250.0, 300.0],
            prr_bin_halfwidth_m: 25.0,
            mode4_rsrp_threshold_init_dbm: -110.0,
            mode4_threshold_step_db: 3.0,
            mode4_candidate_fraction: 0.2,
            mode4_keep_probability: 0.0,
            sensing_window_ms: 1000,
            mode3_batch_period_ms: 100,
            ci_z_score: 4.417,
        }
    }
}

/// A single violated constraint, tagged with the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("failed to read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

impl ConfigError {
    /// Violations carried by an [`ConfigError::Invalid`], empty otherwise.
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

struct Checker(Vec<Violation>);

impl Checker {
    fn require(&mut self, ok: bool, field: &'static str, message: impl Into<String>) {
        if !ok {
            self.0.push(Violation {
                field,
                message: message.into(),
            });
        }
    }

    fn finite(&mut self, value: f64, field: &'static str) -> bool {
        self.require(value.is_finite(), field, "must be finite");
        value.is_finite()
    }

    fn positive(&mut self, value: f64, field: &'static str) {
        if self.finite(value, field) {
            self.require(value > 0.0, field, "must be > 0");
        }
    }

    fn count(&mut self, value: u64, field: &'static str) {
        self.require(value > 0, field, "must be > 0");
    }
}

impl SimConfig {
    /// Parses a TOML document. Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("SimConfig always serializes")
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(self) -> Result<ValidatedConfig, ConfigError> {
        let mut c = Checker(Vec::new());

        c.count(self.num_subframes as u64, "num_subframes");
        c.count(self.num_subbands as u64, "num_subbands");
        c.count(self.rbs_per_subchannel as u64, "rbs_per_subchannel");
        c.count(self.num_lanes as u64, "num_lanes");
        c.count(self.num_vehicles as u64, "num_vehicles");
        c.count(self.sim_duration_ms, "sim_duration_ms");
        c.count(self.sensing_window_ms, "sensing_window_ms");
        c.count(self.mode3_batch_period_ms, "mode3_batch_period_ms");

        c.positive(self.cam_rate_hz, "cam_rate_hz");
        if self.cam_rate_hz.is_finite() && self.cam_rate_hz > 0.0 && self.num_subframes > 0 {
            let period_ms = self.cam_rate_hz * self.num_subframes as f64;
            c.require(
                (period_ms - 1000.0).abs() < 1e-9,
                "cam_rate_hz",
                format!(
                    "rate/subframe mismatch: {} Hz x {} subframes x 1 ms must equal 1 s",
                    self.cam_rate_hz, self.num_subframes
                ),
            );
        }

        for (value, field) in [
            (self.tx_power_dbm, "tx_power_dbm"),
            (self.antenna_gain_tx_db, "antenna_gain_tx_db"),
            (self.antenna_gain_rx_db, "antenna_gain_rx_db"),
            (self.sinr_threshold_db, "sinr_threshold_db"),
            (self.noise_figure_db, "noise_figure_db"),
            (self.mode4_rsrp_threshold_init_dbm, "mode4_rsrp_threshold_init_dbm"),
        ] {
            c.finite(value, field);
        }

        let [sps_lo, sps_hi] = self.sps_period_range_s;
        if c.finite(sps_lo, "sps_period_range_s") && c.finite(sps_hi, "sps_period_range_s") {
            c.require(
                sps_lo <= sps_hi,
                "sps_period_range_s",
                "lower bound exceeds upper bound",
            );
            if self.cam_rate_hz > 0.0 {
                c.require(
                    sps_lo >= 1.0 / self.cam_rate_hz - 1e-12,
                    "sps_period_range_s",
                    "lower bound must cover at least one CAM period",
                );
            }
            // Lifetimes are drawn in whole milliseconds.
            c.require(
                (sps_lo * 1000.0).ceil() <= (sps_hi * 1000.0).floor(),
                "sps_period_range_s",
                "range contains no whole millisecond",
            );
        }

        if c.finite(self.shadow_std_db, "shadow_std_db") {
            c.require(self.shadow_std_db >= 0.0, "shadow_std_db", "must be >= 0");
        }
        c.positive(self.shadow_corr_dist_m, "shadow_corr_dist_m");
        c.positive(self.pathloss_exponent, "pathloss_exponent");
        c.positive(self.pathloss_ref_dist_m, "pathloss_ref_dist_m");
        c.positive(self.carrier_freq_hz, "carrier_freq_hz");
        c.positive(self.road_length_m, "road_length_m");
        if c.finite(self.lane_width_m, "lane_width_m") {
            c.require(self.lane_width_m >= 0.0, "lane_width_m", "must be >= 0");
        }
        c.positive(self.speed_mps, "speed_mps");

        c.require(
            !self.prr_bin_centers_m.is_empty(),
            "prr_bin_centers_m",
            "at least one bin is required",
        );
        c.require(
            self.prr_bin_centers_m.iter().all(|x| x.is_finite() && *x >= 0.0),
            "prr_bin_centers_m",
            "centers must be finite and >= 0",
        );
        c.require(
            self.prr_bin_centers_m.windows(2).all(|w| w[0] < w[1]),
            "prr_bin_centers_m",
            "centers must be strictly increasing",
        );
        c.positive(self.prr_bin_halfwidth_m, "prr_bin_halfwidth_m");
        let min_gap = self
            .prr_bin_centers_m
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        c.require(
            self.prr_bin_halfwidth_m <= min_gap / 2.0,
            "prr_bin_halfwidth_m",
            "bins overlap: half-width exceeds half the minimum gap between centers",
        );

        c.positive(self.mode4_threshold_step_db, "mode4_threshold_step_db");
        if c.finite(self.mode4_candidate_fraction, "mode4_candidate_fraction") {
            c.require(
                self.mode4_candidate_fraction > 0.0 && self.mode4_candidate_fraction <= 1.0,
                "mode4_candidate_fraction",
                "must lie in (0, 1]",
            );
        }
        if c.finite(self.mode4_keep_probability, "mode4_keep_probability") {
            c.require(
                (0.0..=1.0).contains(&self.mode4_keep_probability),
                "mode4_keep_probability",
                "must lie in [0, 1]",
            );
        }
        c.positive(self.ci_z_score, "ci_z_score");

        if c.0.is_empty() {
            Ok(ValidatedConfig(self))
        } else {
            Err(ConfigError::Invalid(c.0))
        }
    }
}

/// A configuration that satisfied every invariant. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig(SimConfig);

impl ValidatedConfig {
    pub fn grid(&self) -> Grid {
        Grid {
            num_subframes: self.0.num_subframes,
            num_subbands: self.0.num_subbands,
        }
    }

    pub fn num_subchannels(&self) -> usize {
        self.0.num_subframes * self.0.num_subbands
    }

    /// Largest distance at which receptions are recorded (exclusive).
    pub fn max_eval_range_m(&self) -> f64 {
        self.0.prr_bin_centers_m.last().copied().unwrap_or(0.0) + self.0.prr_bin_halfwidth_m
    }

    /// Reservation lifetime bounds in whole milliseconds, inclusive.
    pub fn sps_period_range_ms(&self) -> (u64, u64) {
        let [lo, hi] = self.0.sps_period_range_s;
        ((lo * 1000.0).ceil() as u64, (hi * 1000.0).floor() as u64)
    }

    pub fn into_inner(self) -> SimConfig {
        self.0
    }
}

impl Deref for ValidatedConfig {
    type Target = SimConfig;

    fn deref(&self) -> &SimConfig {
        &self.0
    }
}

/// A subchannel: one subframe in time and one sub-band in frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceId {
    pub subframe: usize,
    pub subband: usize,
}

impl ResourceId {
    pub fn new(subframe: usize, subband: usize) -> Self {
        Self { subframe, subband }
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(sf {}, sb {})", self.subframe, self.subband)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("resource {resource} outside {num_subframes}x{num_subbands} grid")]
    ResourceOutOfRange {
        resource: ResourceId,
        num_subframes: usize,
        num_subbands: usize,
    },
    #[error("flat index {index} outside grid of {len} subchannels")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Dimensions of the subchannel grid. Flat indices are subframe-major, so
/// the sub-bands of one subframe are adjacent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub num_subframes: usize,
    pub num_subbands: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.num_subframes * self.num_subbands
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat_index(&self, r: ResourceId) -> Result<usize, GridError> {
        if r.subframe >= self.num_subframes || r.subband >= self.num_subbands {
            return Err(GridError::ResourceOutOfRange {
                resource: r,
                num_subframes: self.num_subframes,
                num_subbands: self.num_subbands,
            });
        }
        Ok(r.subframe * self.num_subbands + r.subband)
    }

    pub fn from_flat(&self, index: usize) -> Result<ResourceId, GridError> {
        if index >= self.len() {
            return Err(GridError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok(ResourceId {
            subframe: index / self.num_subbands,
            subband: index % self.num_subbands,
        })
    }

    /// Flat indices of every sub-band in `subframe`.
    pub fn subframe_range(&self, subframe: usize) -> std::ops::Range<usize> {
        let start = subframe * self.num_subbands;
        start..start + self.num_subbands
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(err: ConfigError) -> Vec<&'static str> {
        err.violations().iter().map(|v| v.field).collect()
    }

    #[test]
    fn defaults_validate_with_300_subchannels() {
        let cfg = SimConfig::default().validate().unwrap();
        assert_eq!(cfg.num_subchannels(), 300);
        assert_eq!(cfg.grid().len(), 300);
        assert_eq!(cfg.max_eval_range_m(), 325.0);
        assert_eq!(cfg.sps_period_range_ms(), (500, 1500));
    }

    #[test]
    fn defaults_match_reference_values() {
        let c = SimConfig::default();
        assert_eq!(c.rbs_per_subchannel, 30);
        assert_eq!(c.num_subbands, 3);
        assert_eq!(c.cam_rate_hz, 10.0);
        assert_eq!(c.tx_power_dbm, 23.0);
        assert_eq!(c.sinr_threshold_db, 3.98);
        assert_eq!(c.sps_period_range_s, [0.5, 1.5]);
        assert_eq!(c.antenna_gain_tx_db, 3.0);
        assert_eq!(c.antenna_gain_rx_db, 3.0);
        assert_eq!(c.shadow_std_db, 7.0);
        assert_eq!(c.shadow_corr_dist_m, 10.0);
        assert_eq!(c.num_vehicles, 600);
        assert_eq!(c.sim_duration_ms, 40_000);
    }

    #[test]
    fn rate_subframe_mismatch_is_reported() {
        let cfg = SimConfig {
            cam_rate_hz: 5.0,
            ..SimConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("rate/subframe mismatch"));
        // 1 / 5 Hz = 0.2 s still fits under the 0.5 s lower bound.
        assert_eq!(fields(err), vec!["cam_rate_hz"]);
    }

    #[test]
    fn zero_vehicles_rejected() {
        let cfg = SimConfig {
            num_vehicles: 0,
            ..SimConfig::default()
        };
        assert_eq!(fields(cfg.validate().unwrap_err()), vec!["num_vehicles"]);
    }

    #[test]
    fn every_violation_is_listed() {
        let cfg = SimConfig {
            num_vehicles: 0,
            shadow_std_db: f64::NAN,
            prr_bin_halfwidth_m: 30.0,
            sps_period_range_s: [0.05, 1.5],
            ..SimConfig::default()
        };
        let f = fields(cfg.validate().unwrap_err());
        assert!(f.contains(&"num_vehicles"));
        assert!(f.contains(&"shadow_std_db"));
        assert!(f.contains(&"prr_bin_halfwidth_m"));
        assert!(f.contains(&"sps_period_range_s"));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = SimConfig::from_toml_str("num_vehicles = 10\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn omitted_keys_take_defaults() {
        let cfg = SimConfig::from_toml_str("num_vehicles = 10\n").unwrap();
        assert_eq!(
            cfg,
            SimConfig {
                num_vehicles: 10,
                ..SimConfig::default()
            }
        );
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SimConfig::default();
        let back = SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn flat_index_examples() {
        let g = SimConfig::default().validate().unwrap().grid();
        assert_eq!(g.flat_index(ResourceId::new(0, 0)).unwrap(), 0);
        assert_eq!(g.flat_index(ResourceId::new(99, 2)).unwrap(), 299);
        assert_eq!(g.from_flat(4).unwrap(), ResourceId::new(1, 1));
        assert!(g.flat_index(ResourceId::new(100, 0)).is_err());
        assert!(g.flat_index(ResourceId::new(0, 3)).is_err());
        assert!(g.from_flat(300).is_err());
    }

    #[test]
    fn flat_index_round_trips_whole_grid() {
        let g = SimConfig::default().validate().unwrap().grid();
        for i in 0..g.len() {
            let r = g.from_flat(i).unwrap();
            assert_eq!(g.flat_index(r).unwrap(), i);
        }
        for sf in 0..g.num_subframes {
            for sb in 0..g.num_subbands {
                let r = ResourceId::new(sf, sb);
                assert_eq!(g.from_flat(g.flat_index(r).unwrap()).unwrap(), r);
            }
        }
    }
}
