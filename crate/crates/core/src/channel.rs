//! Link budget: log-distance pathloss, spatially correlated log-normal
//! shadowing, thermal noise and threshold reception.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ValidatedConfig;
use crate::mobility::wrap_offset;

const SPEED_OF_LIGHT_MPS: f64 = 299_792_458.0;
const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;
const RB_BANDWIDTH_HZ: f64 = 180_000.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Free-space loss at distance `d_m`.
pub fn free_space_pathloss_db(d_m: f64, carrier_freq_hz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * d_m * carrier_freq_hz / SPEED_OF_LIGHT_MPS).log10()
}

/// Log-distance pathloss anchored to free space at the reference distance.
/// Distances below the reference distance are clamped to it.
pub fn pathloss_db(d_m: f64, config: &ValidatedConfig) -> f64 {
    let d0 = config.pathloss_ref_dist_m;
    free_space_pathloss_db(d0, config.carrier_freq_hz)
        + 10.0 * config.pathloss_exponent * (d_m.max(d0) / d0).log10()
}

pub fn rx_power_dbm(tx_dbm: f64, pathloss_db: f64, shadow_db: f64, config: &ValidatedConfig) -> f64 {
    tx_dbm + config.antenna_gain_tx_db + config.antenna_gain_rx_db - pathloss_db - shadow_db
}

/// Thermal noise over one subchannel's bandwidth plus the noise figure.
pub fn noise_power_dbm(config: &ValidatedConfig) -> f64 {
    noise_power_dbm_for(
        config.rbs_per_subchannel as f64 * RB_BANDWIDTH_HZ,
        config.noise_figure_db,
    )
}

pub fn noise_power_dbm_for(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptionOutcome {
    pub received: bool,
    pub sinr_db: f64,
    pub blocked_half_duplex: bool,
}

/// Decides reception from linear powers in mW. The threshold is inclusive.
pub fn reception_from_linear(
    signal_mw: f64,
    interference_mw: f64,
    noise_mw: f64,
    rx_is_transmitting: bool,
    threshold_db: f64,
) -> ReceptionOutcome {
    let sinr_db = linear_to_db(signal_mw / (noise_mw + interference_mw));
    ReceptionOutcome {
        received: !rx_is_transmitting && sinr_db >= threshold_db,
        sinr_db,
        blocked_half_duplex: rx_is_transmitting,
    }
}

/// SINR test for one transmission. `interferer_dbms` holds every other
/// transmitter on the same subchannel in the same subframe.
pub fn evaluate_reception(
    signal_dbm: f64,
    interferer_dbms: &[f64],
    rx_is_transmitting_this_subframe: bool,
    config: &ValidatedConfig,
) -> ReceptionOutcome {
    let interference: f64 = interferer_dbms.iter().map(|&i| db_to_linear(i)).sum();
    reception_from_linear(
        db_to_linear(signal_dbm),
        interference,
        db_to_linear(noise_power_dbm(config)),
        rx_is_transmitting_this_subframe,
        config.sinr_threshold_db,
    )
}

/// Precomputed link-budget constants for the per-subframe hot loop.
#[derive(Debug, Clone)]
pub struct LinkBudget {
    ref_dist_m: f64,
    /// `tx + G_t + G_r - PL(d0)` in dB.
    eirp_at_ref_db: f64,
    exponent: f64,
    pub noise_mw: f64,
    pub threshold_db: f64,
}

impl LinkBudget {
    pub fn new(config: &ValidatedConfig) -> Self {
        let d0 = config.pathloss_ref_dist_m;
        Self {
            ref_dist_m: d0,
            eirp_at_ref_db: rx_power_dbm(config.tx_power_dbm, pathloss_db(d0, config), 0.0, config),
            exponent: config.pathloss_exponent,
            noise_mw: db_to_linear(noise_power_dbm(config)),
            threshold_db: config.sinr_threshold_db,
        }
    }

    pub fn rx_power_dbm(&self, d_m: f64, shadow_db: f64) -> f64 {
        self.eirp_at_ref_db
            - 10.0 * self.exponent * (d_m.max(self.ref_dist_m) / self.ref_dist_m).log10()
            - shadow_db
    }

    /// Same as converting [`LinkBudget::rx_power_dbm`], computed with one
    /// logarithm and one exponential since it runs for every link.
    pub fn rx_power_mw(&self, d_m: f64, shadow_db: f64) -> f64 {
        const DB_TO_NEPER: f64 = std::f64::consts::LN_10 / 10.0;
        let ln_ratio = (d_m.max(self.ref_dist_m) / self.ref_dist_m).ln();
        ((self.eirp_at_ref_db - shadow_db) * DB_TO_NEPER - self.exponent * ln_ratio).exp()
    }
}

/// Relative displacement below which a link's shadowing is left unchanged.
const MIN_DISPLACEMENT_M: f64 = 1e-6;

/// Shadowing state of one unordered vehicle pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkShadowing {
    pub shadow_db: f64,
    /// Longitudinal positions of the lower and higher vehicle id when the
    /// sample last changed; `None` until the first draw.
    pub last_positions: Option<[f64; 2]>,
}

impl LinkShadowing {
    /// Advances the Gauss-Markov process by the change in relative geometry
    /// since the previous call: `s' = rho*s + sqrt(1-rho^2)*N(0, std^2)` with
    /// `rho = exp(-dd / corr_dist)`. The first call draws from the stationary
    /// distribution. Positions are ordered (lower id, higher id).
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        positions: [f64; 2],
        road_length_m: f64,
        std_db: f64,
        corr_dist_m: f64,
        rng: &mut R,
    ) -> f64 {
        self.step(positions, road_length_m, std_db, corr_dist_m, rng);
        self.shadow_db
    }

    /// As [`LinkShadowing::update`]; returns false when the relative
    /// geometry, and therefore the sample, is unchanged.
    fn step<R: Rng + ?Sized>(
        &mut self,
        positions: [f64; 2],
        road_length_m: f64,
        std_db: f64,
        corr_dist_m: f64,
        rng: &mut R,
    ) -> bool {
        let moved = match self.last_positions {
            None => {
                let z: f64 = rng.sample(StandardNormal);
                self.shadow_db = std_db * z;
                true
            }
            Some(last) => {
                let da = wrap_offset(positions[0] - last[0], road_length_m);
                let db = wrap_offset(positions[1] - last[1], road_length_m);
                let moved = (da - db).abs();
                // Equal-speed vehicles keep their geometry; what remains is
                // rounding in the position updates.
                if moved > MIN_DISPLACEMENT_M {
                    let rho = (-moved / corr_dist_m).exp();
                    let z: f64 = rng.sample(StandardNormal);
                    self.shadow_db = rho * self.shadow_db + (1.0 - rho * rho).sqrt() * std_db * z;
                    true
                } else {
                    false
                }
            }
        };
        if moved {
            self.last_positions = Some(positions);
        }
        moved
    }
}

/// Dense table of [`LinkShadowing`] for every unordered pair of vehicles.
#[derive(Debug, Clone)]
pub struct ShadowingTable {
    num_vehicles: usize,
    links: Vec<LinkShadowing>,
    std_db: f64,
    corr_dist_m: f64,
    road_length_m: f64,
}

impl ShadowingTable {
    pub fn new(config: &ValidatedConfig) -> Self {
        let n = config.num_vehicles;
        Self {
            num_vehicles: n,
            links: vec![LinkShadowing::default(); n * n.saturating_sub(1) / 2],
            std_db: config.shadow_std_db,
            corr_dist_m: config.shadow_corr_dist_m,
            road_length_m: config.road_length_m,
        }
    }

    /// Number of unordered pairs.
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Dense index of the unordered pair (a, b), in `0..len()`.
    pub fn slot(&self, a: usize, b: usize) -> usize {
        debug_assert!(a != b && a < self.num_vehicles && b < self.num_vehicles);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        hi * (hi - 1) / 2 + lo
    }

    pub fn link(&self, a: usize, b: usize) -> &LinkShadowing {
        &self.links[self.slot(a, b)]
    }

    /// Updates the (a, b) link to the given positions and returns its sample.
    /// Symmetric in its arguments.
    pub fn sample<R: Rng + ?Sized>(&mut self, a: usize, xa: f64, b: usize, xb: f64, rng: &mut R) -> f64 {
        let positions = if a < b { [xa, xb] } else { [xb, xa] };
        let slot = self.slot(a, b);
        let (road, std, corr) = (self.road_length_m, self.std_db, self.corr_dist_m);
        self.links[slot].update(positions, road, std, corr, rng)
    }

    /// As [`ShadowingTable::sample`], also reporting whether the pair moved
    /// relative to each other since the previous sample.
    pub fn sample_moved<R: Rng + ?Sized>(
        &mut self,
        a: usize,
        xa: f64,
        b: usize,
        xb: f64,
        rng: &mut R,
    ) -> (f64, bool) {
        let positions = if a < b { [xa, xb] } else { [xb, xa] };
        let slot = self.slot(a, b);
        let (road, std, corr) = (self.road_length_m, self.std_db, self.corr_dist_m);
        let link = &mut self.links[slot];
        let moved = link.step(positions, road, std, corr, rng);
        (link.shadow_db, moved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Reference channel used by the worked examples.
    fn defaults() -> ValidatedConfig {
        SimConfig {
            pathloss_exponent: 2.27,
            noise_figure_db: 9.0,
            ..SimConfig::default()
        }
        .validate()
        .unwrap()
    }

    #[test]
    fn pathloss_examples() {
        let c = defaults();
        // 20 log10(4 pi * 10 * 5.9e9 / c0)
        let fs = 20.0 * (4.0 * std::f64::consts::PI * 10.0 * 5.9e9 / 299_792_458.0f64).log10();
        assert!((pathloss_db(10.0, &c) - fs).abs() < 1e-12);
        assert!((pathloss_db(10.0, &c) - 67.86).abs() < 0.005);
        assert!((pathloss_db(100.0, &c) - (fs + 22.7)).abs() < 1e-9);
        assert!((pathloss_db(100.0, &c) - 90.56).abs() < 0.005);
        assert_eq!(pathloss_db(0.0, &c), pathloss_db(10.0, &c));
    }

    #[test]
    fn pathloss_non_decreasing() {
        let c = defaults();
        let mut prev = pathloss_db(10.0, &c);
        for i in 1..1000 {
            let pl = pathloss_db(10.0 + i as f64 * 2.5, &c);
            assert!(pl > prev);
            prev = pl;
        }
    }

    #[test]
    fn rx_power_examples() {
        let c = defaults();
        assert!((rx_power_dbm(23.0, 90.56, 0.0, &c) - (-61.56)).abs() < 1e-9);
        let a = rx_power_dbm(23.0, 90.56, 0.0, &c);
        let b = rx_power_dbm(23.0, 90.56, 7.0, &c);
        assert!((a - b - 7.0).abs() < 1e-12);
        let zero_gain = SimConfig {
            antenna_gain_tx_db: 0.0,
            antenna_gain_rx_db: 0.0,
            ..(*c).clone()
        }
        .validate()
        .unwrap();
        assert_eq!(rx_power_dbm(23.0, 0.0, 0.0, &zero_gain), 23.0);
    }

    #[test]
    fn link_budget_matches_reference_functions() {
        let c = defaults();
        let lb = LinkBudget::new(&c);
        for d in [0.0, 5.0, 10.0, 55.0, 300.0, 2400.0] {
            let expect = rx_power_dbm(c.tx_power_dbm, pathloss_db(d, &c), 3.5, &c);
            assert!((lb.rx_power_dbm(d, 3.5) - expect).abs() < 1e-9);
            let mw = lb.rx_power_mw(d, 3.5);
            assert!((mw / db_to_linear(expect) - 1.0).abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn noise_examples() {
        let c = defaults();
        // -174 + 10 log10(5.4 MHz) + 9
        let expect = -174.0 + 10.0 * (30.0f64 * 180_000.0).log10() + 9.0;
        assert!((noise_power_dbm(&c) - expect).abs() < 1e-12);
        assert!((noise_power_dbm(&c) - (-97.67)).abs() < 0.01);
        assert_eq!(noise_power_dbm_for(1.0, 0.0), -174.0);
        let doubled = noise_power_dbm_for(2.0e6, 0.0) - noise_power_dbm_for(1.0e6, 0.0);
        assert!((doubled - 3.0103).abs() < 1e-4);
    }

    #[test]
    fn reception_examples() {
        let c = defaults();
        let out = evaluate_reception(-90.0, &[], false, &c);
        assert!(out.received && !out.blocked_half_duplex);
        assert!((out.sinr_db - 7.67).abs() < 0.01);

        let blocked = evaluate_reception(-40.0, &[], true, &c);
        assert!(!blocked.received && blocked.blocked_half_duplex);
    }

    #[test]
    fn threshold_is_inclusive() {
        let noise = 1.0;
        let signal = db_to_linear(3.98);
        let at = reception_from_linear(signal, 0.0, noise, false, linear_to_db(signal / noise));
        assert!(at.received);
        let below = reception_from_linear(signal * 0.999, 0.0, noise, false, 3.98);
        assert!(!below.received);
    }

    #[test]
    fn interference_never_improves_sinr() {
        let c = defaults();
        let clean = evaluate_reception(-80.0, &[], false, &c).sinr_db;
        let mut interferers = Vec::new();
        let mut prev = clean;
        for i in [-100.0, -95.0, -130.0, -85.0] {
            interferers.push(i);
            let s = evaluate_reception(-80.0, &interferers, false, &c).sinr_db;
            assert!(s <= prev && s <= clean);
            prev = s;
        }
    }

    #[test]
    fn shadowing_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut link = LinkShadowing::default();
        let first = link.update([0.0, 100.0], 5000.0, 7.0, 10.0, &mut rng);
        // No relative movement keeps the sample.
        assert_eq!(link.update([20.0, 120.0], 5000.0, 7.0, 10.0, &mut rng), first);
        // Moving 10 m relative: rho = e^-1. Reproduce with a cloned rng.
        let mut probe = rng.clone();
        let z: f64 = probe.sample(StandardNormal);
        let rho = (-1.0f64).exp();
        assert!((rho - 0.3679).abs() < 1e-4);
        let next = link.update([30.0, 120.0], 5000.0, 7.0, 10.0, &mut rng);
        assert!((next - (rho * first + (1.0 - rho * rho).sqrt() * 7.0 * z)).abs() < 1e-12);
    }

    #[test]
    fn shadowing_displacement_uses_wrapped_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut link = LinkShadowing::default();
        let first = link.update([4999.0, 10.0], 5000.0, 7.0, 10.0, &mut rng);
        // Both moved +2 m, one across the seam: no relative movement.
        assert_eq!(link.update([1.0, 12.0], 5000.0, 7.0, 10.0, &mut rng), first);
    }

    #[test]
    fn table_is_symmetric() {
        let c = defaults();
        let mut table = ShadowingTable::new(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s1 = table.sample(3, 100.0, 7, 200.0, &mut rng);
        assert_eq!(table.sample(7, 200.0, 3, 100.0, &mut rng), s1);
        assert_eq!(table.link(3, 7), table.link(7, 3));
        assert_eq!(table.link(3, 7).last_positions, Some([100.0, 200.0]));
    }
}
