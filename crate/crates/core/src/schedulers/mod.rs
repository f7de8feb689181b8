//! Subchannel scheduling policies.
//!
//! * [`mode3::min_power`]: the eNodeB assigns each requesting vehicle the
//!   subchannel set minimizing the summed reported received power.
//! * [`mode3::max_reuse`]: the eNodeB maximizes the distance to the nearest
//!   co-channel user of each assigned subchannel.
//! * [`mode4::select`]: a vehicle excludes subchannels by average sensed power
//!   and picks one of the survivors at random.
//!
//! Mode-3 policies work from system-wide knowledge; mode-4 only ever sees the
//! deciding vehicle's own [`SensingState`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::assignment::AssignmentError;
use crate::config::{Grid, ResourceId, ValidatedConfig};

pub mod mode3;
pub mod mode4;

pub use mode4::CandidateStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchedulerKind {
    Mode3MinPower,
    Mode3MaxReuse,
    Mode4Sps,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 3] = [
        SchedulerKind::Mode3MinPower,
        SchedulerKind::Mode3MaxReuse,
        SchedulerKind::Mode4Sps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Mode3MinPower => "mode3-minpower",
            SchedulerKind::Mode3MaxReuse => "mode3-maxreuse",
            SchedulerKind::Mode4Sps => "mode4-sps",
        }
    }

    /// Whether decisions depend on per-vehicle sensing history.
    pub fn needs_sensing(self) -> bool {
        !matches!(self, SchedulerKind::Mode3MaxReuse)
    }

    pub fn is_centralized(self) -> bool {
        !matches!(self, SchedulerKind::Mode4Sps)
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown scheduler '{0}' (expected one of: mode3-minpower, mode3-maxreuse, mode4-sps)")]
pub struct UnknownScheduler(pub String);

impl FromStr for SchedulerKind {
    type Err = UnknownScheduler;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownScheduler(s.to_owned()))
    }
}

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("assignment failed: {0}")]
    Assignment(#[from] AssignmentError),
    #[error("vehicle {0} has no report")]
    MissingReport(usize),
}

/// A reservation granted to one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocationDecision {
    pub vehicle_id: usize,
    pub resource: ResourceId,
    pub decided_at_ms: u64,
    /// Absolute time at which the vehicle must reselect.
    pub sps_expiry_ms: u64,
}

impl AllocationDecision {
    pub fn lifetime_ms(&self) -> u64 {
        self.sps_expiry_ms - self.decided_at_ms
    }
}

/// Draws a reservation lifetime uniformly from the configured range.
pub fn draw_lifetime_ms<R: Rng + ?Sized>(rng: &mut R, config: &ValidatedConfig) -> u64 {
    let (lo, hi) = config.sps_period_range_ms();
    rng.random_range(lo..=hi)
}

/// Which vehicles currently hold each subchannel, indexed by flat index.
/// Holder lists are kept sorted by vehicle id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HolderMap {
    holders: Vec<Vec<usize>>,
}

impl HolderMap {
    pub fn new(grid: Grid) -> Self {
        Self {
            holders: vec![Vec::new(); grid.len()],
        }
    }

    pub fn holders(&self, flat: usize) -> &[usize] {
        &self.holders[flat]
    }

    pub fn insert(&mut self, flat: usize, vehicle: usize) {
        let list = &mut self.holders[flat];
        if let Err(pos) = list.binary_search(&vehicle) {
            list.insert(pos, vehicle);
        }
    }

    pub fn remove(&mut self, flat: usize, vehicle: usize) -> bool {
        let list = &mut self.holders[flat];
        match list.binary_search(&vehicle) {
            Ok(pos) => {
                list.remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    pub fn len(&self) -> usize {
        self.holders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.holders.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.holders.iter().enumerate().map(|(i, h)| (i, h.as_slice()))
    }
}

/// Per-vehicle record of sensed subchannel power over the sensing window.
///
/// The window is kept as `slots` consecutive CAM periods; each subchannel
/// is sampled once per period. Unmeasured samples (own transmissions, or not
/// yet observed) are `NaN` and never enter an average.
#[derive(Debug, Clone)]
pub struct SensingState {
    vehicle_id: usize,
    grid: Grid,
    slots: usize,
    samples: Vec<f64>,
    own_resource: Option<ResourceId>,
}

impl SensingState {
    pub fn new(vehicle_id: usize, grid: Grid, window_ms: u64) -> Self {
        let slots = (window_ms as usize).div_ceil(grid.num_subframes).max(1);
        Self {
            vehicle_id,
            grid,
            slots,
            samples: vec![f64::NAN; slots * grid.len()],
            own_resource: None,
        }
    }

    pub fn vehicle_id(&self) -> usize {
        self.vehicle_id
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn own_resource(&self) -> Option<ResourceId> {
        self.own_resource
    }

    pub fn set_own_resource(&mut self, resource: ResourceId) {
        self.own_resource = Some(resource);
    }

    fn slot_range(&self, now_ms: u64) -> (usize, std::ops::Range<usize>) {
        let nsf = self.grid.num_subframes as u64;
        let slot = ((now_ms / nsf) % self.slots as u64) as usize;
        let range = self.grid.subframe_range((now_ms % nsf) as usize);
        (slot * self.grid.len(), range)
    }

    /// Stores the total power sensed on each sub-band of the subframe at
    /// `now_ms`, replacing the sample from one window earlier.
    pub fn record(&mut self, now_ms: u64, subband_powers_mw: &[f64]) {
        debug_assert_eq!(subband_powers_mw.len(), self.grid.num_subbands);
        let (base, range) = self.slot_range(now_ms);
        self.samples[base + range.start..base + range.end].copy_from_slice(subband_powers_mw);
    }

    /// Marks the subframe at `now_ms` as unmonitored (half-duplex).
    pub fn mask(&mut self, now_ms: u64) {
        let (base, range) = self.slot_range(now_ms);
        self.samples[base + range.start..base + range.end].fill(f64::NAN);
    }

    /// Linear average of the measured samples of one subchannel.
    pub fn average_mw(&self, flat: usize) -> Option<f64> {
        let len = self.grid.len();
        let (sum, count) = (0..self.slots)
            .map(|s| self.samples[s * len + flat])
            .filter(|x| !x.is_nan())
            .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
        (count > 0).then(|| sum / count as f64)
    }

    pub fn averages_mw(&self) -> Vec<Option<f64>> {
        (0..self.grid.len()).map(|i| self.average_mw(i)).collect()
    }
}
