//! Centralized eNodeB schedulers built on bipartite assignment.
//!
//! Requests arriving in the same subframe form one batch. Within a batch
//! every vehicle gets a distinct subchannel; subchannels held by vehicles
//! outside the batch stay assignable (spatial reuse). Batches larger than
//! the grid are served in consecutive chunks in vehicle-id order.
//!
//! Empty subchannels all tie at the noise floor (or the road length), so the
//! columns are shuffled before every solve. Without this every requester
//! would land on the lowest-indexed tied subchannel, and requests arriving
//! within one CAM period cannot see each other's new reservations.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{draw_lifetime_ms, AllocationDecision, HolderMap, SchedulerError};
use crate::assignment::{solve_max, solve_min, Assignment, CostMatrix};
use crate::config::ValidatedConfig;
use crate::mobility::{distance, VehicleKinematics};

/// Builds the cost matrix from each batch vehicle's per-subchannel average
/// received power (mW). Unmeasured entries take that vehicle's median
/// measured power.
pub fn min_power_costs(reports: &[&[Option<f64>]], num_subchannels: usize) -> CostMatrix {
    let mut cost = CostMatrix::filled(reports.len(), num_subchannels, 0.0);
    for (row, report) in reports.iter().enumerate() {
        let fill = median(report.iter().flatten().copied().collect()).unwrap_or(0.0);
        for (col, p) in report.iter().enumerate().take(num_subchannels) {
            cost.set(row, col, p.unwrap_or(fill));
        }
    }
    cost
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    Some(if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        (xs[mid - 1] + xs[mid]) / 2.0
    })
}

/// Weight of (vehicle, subchannel): distance to the nearest current holder
/// of the subchannel that is not in `vacating`, or the road length if there
/// is none. `vacating` must be sorted.
pub fn max_reuse_weights(
    rows: &[usize],
    vacating: &[usize],
    fleet: &[VehicleKinematics],
    holders: &HolderMap,
    config: &ValidatedConfig,
) -> CostMatrix {
    let mut weight = CostMatrix::filled(rows.len(), holders.len(), config.road_length_m);
    for (row, &v) in rows.iter().enumerate() {
        for (col, list) in holders.iter() {
            let nearest = list
                .iter()
                .filter(|&&h| h != v && vacating.binary_search(&h).is_err())
                .map(|&h| distance(&fleet[v], &fleet[h], config))
                .fold(config.road_length_m, f64::min);
            weight.set(row, col, nearest);
        }
    }
    weight
}

/// Solves over a random column order, breaking ties uniformly; returns
/// original column indices.
fn solve_shuffled<R: Rng + ?Sized>(
    matrix: &CostMatrix,
    maximize: bool,
    rng: &mut R,
) -> Result<Vec<usize>, SchedulerError> {
    let mut order: Vec<usize> = (0..matrix.cols()).collect();
    order.shuffle(rng);
    let mut permuted = CostMatrix::filled(matrix.rows(), matrix.cols(), 0.0);
    for r in 0..matrix.rows() {
        let row = matrix.row(r);
        for (c, &src) in order.iter().enumerate() {
            permuted.set(r, c, row[src]);
        }
    }
    let assignment: Assignment = if maximize { solve_max(&permuted)? } else { solve_min(&permuted)? };
    Ok(assignment.columns.iter().map(|&c| order[c]).collect())
}

fn decisions<R: Rng + ?Sized>(
    batch: &[usize],
    columns: &[usize],
    now_ms: u64,
    rng: &mut R,
    config: &ValidatedConfig,
) -> Vec<AllocationDecision> {
    let grid = config.grid();
    columns
        .iter()
        .enumerate()
        .map(|(row, &col)| AllocationDecision {
            vehicle_id: batch[row],
            resource: grid.from_flat(col).expect("column inside grid"),
            decided_at_ms: now_ms,
            sps_expiry_ms: now_ms + draw_lifetime_ms(rng, config),
        })
        .collect()
}

fn sorted_batch(batch: &[usize]) -> Vec<usize> {
    let mut b = batch.to_vec();
    b.sort_unstable();
    b.dedup();
    b
}

/// Minimum summed received power. `reports(v)` yields vehicle `v`'s
/// per-subchannel average power as uplinked to the eNodeB.
pub fn min_power<'a, R: Rng + ?Sized>(
    now_ms: u64,
    batch: &[usize],
    reports: impl Fn(usize) -> Option<&'a [Option<f64>]>,
    rng: &mut R,
    config: &ValidatedConfig,
) -> Result<Vec<AllocationDecision>, SchedulerError> {
    let m = config.num_subchannels();
    let mut out = Vec::with_capacity(batch.len());
    for chunk in sorted_batch(batch).chunks(m) {
        let rows = chunk
            .iter()
            .map(|&v| reports(v).ok_or(SchedulerError::MissingReport(v)))
            .collect::<Result<Vec<_>, _>>()?;
        let columns = solve_shuffled(&min_power_costs(&rows, m), false, rng)?;
        out.extend(decisions(chunk, &columns, now_ms, rng, config));
    }
    Ok(out)
}

/// Maximum reuse distance. Batch members' own holdings count as vacated.
pub fn max_reuse<R: Rng + ?Sized>(
    now_ms: u64,
    batch: &[usize],
    fleet: &[VehicleKinematics],
    holders: &HolderMap,
    rng: &mut R,
    config: &ValidatedConfig,
) -> Result<Vec<AllocationDecision>, SchedulerError> {
    let batch = sorted_batch(batch);
    let mut out = Vec::with_capacity(batch.len());
    for chunk in batch.chunks(config.num_subchannels()) {
        let weight = max_reuse_weights(chunk, &batch, fleet, holders, config);
        let columns = solve_shuffled(&weight, true, rng)?;
        out.extend(decisions(chunk, &columns, now_ms, rng, config));
    }
    Ok(out)
}
