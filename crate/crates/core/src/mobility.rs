//! Constant-speed vehicles on a wrap-around multi-lane freeway.

use rand::Rng;

use crate::config::ValidatedConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleKinematics {
    pub vehicle_id: usize,
    /// Longitudinal position in `[0, road_length)`.
    pub position_m: f64,
    pub lane: usize,
    /// `+1` or `-1`.
    pub direction: i8,
    pub speed_mps: f64,
}

/// Lanes in the lower half drive in `+x`, the rest in `-x`.
pub fn lane_direction(lane: usize, num_lanes: usize) -> i8 {
    if lane < num_lanes / 2 {
        1
    } else {
        -1
    }
}

/// Places `num_vehicles` vehicles round-robin over the lanes at i.i.d.
/// uniform longitudinal positions.
pub fn init_fleet<R: Rng + ?Sized>(config: &ValidatedConfig, rng: &mut R) -> Vec<VehicleKinematics> {
    (0..config.num_vehicles)
        .map(|vehicle_id| {
            let lane = vehicle_id % config.num_lanes;
            VehicleKinematics {
                vehicle_id,
                position_m: rng.random_range(0.0..config.road_length_m),
                lane,
                direction: lane_direction(lane, config.num_lanes),
                speed_mps: config.speed_mps,
            }
        })
        .collect()
}

/// Wraps `x` into `[0, length)`.
pub fn wrap_position(x: f64, length: f64) -> f64 {
    // Inputs are almost always within one lap of the road.
    let r = if (0.0..length).contains(&x) {
        return x;
    } else if (-length..0.0).contains(&x) {
        x + length
    } else if (length..2.0 * length).contains(&x) {
        x - length
    } else {
        x.rem_euclid(length)
    };
    // Tiny negative inputs can round up to `length`.
    if r >= length {
        0.0
    } else {
        r
    }
}

/// Signed separation wrapped into `[-length/2, length/2)`.
pub fn wrap_offset(dx: f64, length: f64) -> f64 {
    let half = length / 2.0;
    wrap_position(dx + half, length) - half
}

pub fn advance(fleet: &mut [VehicleKinematics], dt_s: f64, road_length_m: f64) {
    for v in fleet {
        let next = v.position_m + f64::from(v.direction) * v.speed_mps * dt_s;
        v.position_m = wrap_position(next, road_length_m);
    }
}

/// Euclidean distance using the shorter way around the loop.
pub fn distance(a: &VehicleKinematics, b: &VehicleKinematics, config: &ValidatedConfig) -> f64 {
    distance_on_loop(
        a.position_m,
        a.lane,
        b.position_m,
        b.lane,
        config.road_length_m,
        config.lane_width_m,
    )
}

pub fn distance_on_loop(
    xa: f64,
    lane_a: usize,
    xb: f64,
    lane_b: usize,
    road_length_m: f64,
    lane_width_m: f64,
) -> f64 {
    let dx = (xa - xb).abs();
    let dx = dx.min(road_length_m - dx);
    let dy = lane_width_m * lane_a.abs_diff(lane_b) as f64;
    (dx * dx + dy * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(f: impl FnOnce(&mut SimConfig)) -> ValidatedConfig {
        let mut c = SimConfig::default();
        f(&mut c);
        c.validate().unwrap()
    }

    fn car(x: f64, lane: usize) -> VehicleKinematics {
        VehicleKinematics {
            vehicle_id: 0,
            position_m: x,
            lane,
            direction: 1,
            speed_mps: 25.0,
        }
    }

    #[test]
    fn round_robin_lanes() {
        let c = cfg(|_| {});
        let fleet = init_fleet(&c, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(fleet.len(), 600);
        for lane in 0..6 {
            assert_eq!(fleet.iter().filter(|v| v.lane == lane).count(), 100);
        }
        for v in &fleet {
            assert!((0.0..5000.0).contains(&v.position_m));
            assert_eq!(v.direction, if v.lane < 3 { 1 } else { -1 });
            assert_eq!(v.speed_mps, 27.78);
        }
    }

    #[test]
    fn single_vehicle_in_lane_zero() {
        let c = cfg(|c| c.num_vehicles = 1);
        let fleet = init_fleet(&c, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(fleet.len(), 1);
        assert_eq!(fleet[0].lane, 0);
    }

    #[test]
    fn mean_initial_position_is_half_the_road() {
        let c = cfg(|c| c.num_vehicles = 100_000);
        let fleet = init_fleet(&c, &mut ChaCha8Rng::seed_from_u64(7));
        let mean = fleet.iter().map(|v| v.position_m).sum::<f64>() / fleet.len() as f64;
        assert!((mean - 2500.0).abs() < 25.0, "mean {mean}");
    }

    #[test]
    fn advance_wraps() {
        let mut fleet = [car(4999.0, 0)];
        advance(&mut fleet, 0.1, 5000.0);
        assert!((fleet[0].position_m - 1.5).abs() < 1e-9);

        let mut back = [VehicleKinematics {
            direction: -1,
            ..car(1.0, 4)
        }];
        advance(&mut back, 0.1, 5000.0);
        assert!((back[0].position_m - 4998.5).abs() < 1e-9);
    }

    #[test]
    fn advance_by_zero_is_identity() {
        let c = cfg(|_| {});
        let mut fleet = init_fleet(&c, &mut ChaCha8Rng::seed_from_u64(3));
        let before = fleet.clone();
        advance(&mut fleet, 0.0, c.road_length_m);
        assert_eq!(fleet, before);
    }

    #[test]
    fn full_loop_returns_to_start() {
        let c = cfg(|_| {});
        let mut fleet = init_fleet(&c, &mut ChaCha8Rng::seed_from_u64(3));
        let before = fleet.clone();
        advance(&mut fleet, c.road_length_m / c.speed_mps, c.road_length_m);
        for (a, b) in fleet.iter().zip(&before) {
            let d = wrap_offset(a.position_m - b.position_m, c.road_length_m).abs();
            assert!(d < 1e-6, "drift {d}");
        }
    }

    #[test]
    fn distance_examples() {
        let c = cfg(|_| {});
        assert!((distance(&car(100.0, 0), &car(4950.0, 0), &c) - 150.0).abs() < 1e-9);
        assert!((distance(&car(10.0, 0), &car(10.0, 2), &c) - 8.0).abs() < 1e-9);
        let d = distance(&car(10.0, 0), &car(40.0, 1), &c);
        assert!((d - 916f64.sqrt()).abs() < 1e-9);
        assert!((d - 30.27).abs() < 0.005);
    }

    #[test]
    fn advance_preserves_lane_order() {
        let c = cfg(|_| {});
        let mut fleet = init_fleet(&c, &mut ChaCha8Rng::seed_from_u64(11));
        // Cyclic order within a lane is invariant under a common shift.
        let order = |fleet: &[VehicleKinematics], lane: usize| {
            let mut ids: Vec<(f64, usize)> = fleet
                .iter()
                .filter(|v| v.lane == lane)
                .map(|v| (v.position_m, v.vehicle_id))
                .collect();
            ids.sort_by(|a, b| a.0.total_cmp(&b.0));
            let ids: Vec<usize> = ids.into_iter().map(|p| p.1).collect();
            let start = ids.iter().position(|&i| i == lane).unwrap();
            let mut rotated = ids[start..].to_vec();
            rotated.extend_from_slice(&ids[..start]);
            rotated
        };
        let before: Vec<_> = (0..6).map(|l| order(&fleet, l)).collect();
        for _ in 0..1000 {
            advance(&mut fleet, 0.001, c.road_length_m);
        }
        let after: Vec<_> = (0..6).map(|l| order(&fleet, l)).collect();
        assert_eq!(before, after);
    }

    proptest! {
        #[test]
        fn distance_is_a_bounded_symmetric_metric(
            xa in 0.0f64..5000.0, xb in 0.0f64..5000.0, la in 0usize..6, lb in 0usize..6
        ) {
            let c = cfg(|_| {});
            let a = car(xa, la);
            let b = car(xb, lb);
            let dab = distance(&a, &b, &c);
            prop_assert!((dab - distance(&b, &a, &c)).abs() < 1e-12);
            prop_assert_eq!(distance(&a, &a, &c), 0.0);
            let bound = (2500f64.powi(2) + 20f64.powi(2)).sqrt();
            prop_assert!(dab <= bound + 1e-9);
        }

        #[test]
        fn wrapping_lands_in_range_and_keeps_residue(x in -20_000.0f64..20_000.0) {
            let w = wrap_position(x, 5000.0);
            prop_assert!((0.0..5000.0).contains(&w));
            let k = ((x - w) / 5000.0).round();
            prop_assert!((x - w - k * 5000.0).abs() < 1e-9);
            let o = wrap_offset(x, 5000.0);
            prop_assert!((-2500.0..2500.0).contains(&o));
        }
    }
}
