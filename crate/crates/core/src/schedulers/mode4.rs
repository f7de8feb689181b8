//! Distributed sensing-based semi-persistent selection.

use rand::Rng;

use super::{draw_lifetime_ms, AllocationDecision, SensingState};
use crate::channel::linear_to_db;
use crate::config::ValidatedConfig;

/// Bookkeeping from one selection, used to check the candidate floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateStats {
    pub selectable: usize,
    pub candidates: usize,
    pub threshold_dbm: f64,
    /// Number of threshold increments applied.
    pub iterations: u32,
    /// True when the previous resource was kept without a new selection.
    pub kept: bool,
}

impl CandidateStats {
    /// Smallest admissible candidate count for `selectable` subchannels.
    pub fn floor(selectable: usize, fraction: f64) -> usize {
        (fraction * selectable as f64 - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode4Selection {
    pub decision: AllocationDecision,
    pub stats: CandidateStats,
}

/// Selects a subchannel from the vehicle's own sensing history only.
///
/// Subchannels in the vehicle's current transmit subframe cannot be
/// monitored and are not selectable; neither are subchannels with no
/// measured sample in the window. The exclusion threshold starts at the
/// configured level and rises in fixed steps until the surviving
/// candidates make up the configured fraction of the selectable set. One
/// candidate is then drawn uniformly.
pub fn select<R: Rng + ?Sized>(
    sensing: &SensingState,
    now_ms: u64,
    rng: &mut R,
    config: &ValidatedConfig,
) -> Mode4Selection {
    let grid = sensing.grid();
    let lifetime_decision = |resource, rng: &mut R| AllocationDecision {
        vehicle_id: sensing.vehicle_id(),
        resource,
        decided_at_ms: now_ms,
        sps_expiry_ms: now_ms + draw_lifetime_ms(rng, config),
    };

    if let Some(own) = sensing.own_resource() {
        if config.mode4_keep_probability > 0.0 && rng.random::<f64>() < config.mode4_keep_probability {
            return Mode4Selection {
                decision: lifetime_decision(own, rng),
                stats: CandidateStats {
                    selectable: 0,
                    candidates: 0,
                    threshold_dbm: f64::NAN,
                    iterations: 0,
                    kept: true,
                },
            };
        }
    }

    let own_subframe = sensing.own_resource().map(|r| r.subframe);
    let selectable: Vec<(usize, f64)> = (0..grid.len())
        .filter(|&i| Some(i / grid.num_subbands) != own_subframe)
        .filter_map(|i| sensing.average_mw(i).map(|p| (i, linear_to_db(p))))
        .collect();

    let (candidates, threshold_dbm, iterations) = if selectable.is_empty() {
        // Nothing was ever sensed: every subchannel outside the own
        // subframe is equally unknown.
        let all: Vec<usize> = (0..grid.len())
            .filter(|&i| Some(i / grid.num_subbands) != own_subframe)
            .collect();
        (all, f64::INFINITY, 0)
    } else {
        exclude_by_threshold(&selectable, config)
    };

    let pick = candidates[rng.random_range(0..candidates.len())];
    let resource = grid.from_flat(pick).expect("candidate inside grid");
    Mode4Selection {
        decision: lifetime_decision(resource, rng),
        stats: CandidateStats {
            selectable: selectable.len(),
            candidates: candidates.len(),
            threshold_dbm,
            iterations,
            kept: false,
        },
    }
}

/// Raises the threshold until at least the configured fraction of
/// `selectable` (flat index, average dBm) lies at or below it.
pub fn exclude_by_threshold(
    selectable: &[(usize, f64)],
    config: &ValidatedConfig,
) -> (Vec<usize>, f64, u32) {
    let needed = CandidateStats::floor(selectable.len(), config.mode4_candidate_fraction);
    let mut threshold = config.mode4_rsrp_threshold_init_dbm;
    let mut iterations = 0;
    loop {
        let candidates: Vec<usize> = selectable
            .iter()
            .filter(|(_, p)| *p <= threshold)
            .map(|(i, _)| *i)
            .collect();
        if candidates.len() >= needed && !candidates.is_empty() {
            return (candidates, threshold, iterations);
        }
        threshold += config.mode4_threshold_step_db;
        iterations += 1;
    }
}
