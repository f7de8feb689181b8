//! Subframe-by-subframe simulation driver.
//!
//! Each 1 ms subframe: move vehicles, let every vehicle whose reservation
//! falls in this subframe broadcast its CAM, evaluate reception at every
//! vehicle within the evaluation range, update sensing, then serve expired
//! reservations. A run is a deterministic function of (config, scheduler,
//! seed); one ChaCha stream is consumed in a fixed order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{reception_from_linear, LinkBudget, ReceptionOutcome, ShadowingTable};
use crate::config::{ResourceId, ValidatedConfig};
use crate::metrics::{PrrAccumulator, SimResult};
use crate::mobility::{advance, distance_on_loop, init_fleet, VehicleKinematics};
use crate::schedulers::{
    draw_lifetime_ms, mode3, mode4, AllocationDecision, CandidateStats, HolderMap, SchedulerError, SchedulerKind,
    SensingState,
};

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scheduler failed at t = {time_ms} ms: {source}")]
    Scheduler {
        time_ms: u64,
        #[source]
        source: SchedulerError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxEvent {
    pub time_ms: u64,
    pub tx_id: usize,
    pub resource: ResourceId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxRecord {
    pub time_ms: u64,
    pub tx_id: usize,
    pub rx_id: usize,
    pub distance_m: f64,
    pub outcome: ReceptionOutcome,
}

/// Hooks into a running simulation. All methods default to no-ops.
pub trait RunObserver {
    fn on_tx(&mut self, _event: &TxEvent) {}
    fn on_rx(&mut self, _record: &RxRecord) {}
    /// Called for every reservation granted after bootstrap. `stats` is set
    /// for mode-4 selections.
    fn on_allocation(&mut self, _decision: &AllocationDecision, _stats: Option<&CandidateStats>) {}
}

impl RunObserver for () {}

impl<T: RunObserver + ?Sized> RunObserver for &mut T {
    fn on_tx(&mut self, event: &TxEvent) {
        (**self).on_tx(event)
    }
    fn on_rx(&mut self, record: &RxRecord) {
        (**self).on_rx(record)
    }
    fn on_allocation(&mut self, decision: &AllocationDecision, stats: Option<&CandidateStats>) {
        (**self).on_allocation(decision, stats)
    }
}

impl<A: RunObserver, B: RunObserver> RunObserver for (A, B) {
    fn on_tx(&mut self, event: &TxEvent) {
        self.0.on_tx(event);
        self.1.on_tx(event);
    }
    fn on_rx(&mut self, record: &RxRecord) {
        self.0.on_rx(record);
        self.1.on_rx(record);
    }
    fn on_allocation(&mut self, decision: &AllocationDecision, stats: Option<&CandidateStats>) {
        self.0.on_allocation(decision, stats);
        self.1.on_allocation(decision, stats);
    }
}

/// Complete simulation state.
pub struct World {
    pub time_ms: u64,
    pub fleet: Vec<VehicleKinematics>,
    pub allocations: Vec<AllocationDecision>,
    /// Empty when the scheduler does not use sensing.
    pub sensing: Vec<SensingState>,
    pub shadowing: ShadowingTable,
    pub holders: HolderMap,
    pub rng: SimRng,
}

impl World {
    /// True when `holders` is exactly the inverse of `allocations`.
    pub fn holders_consistent(&self, config: &ValidatedConfig) -> bool {
        let grid = config.grid();
        let mut expected = HolderMap::new(grid);
        for a in &self.allocations {
            match grid.flat_index(a.resource) {
                Ok(flat) => expected.insert(flat, a.vehicle_id),
                Err(_) => return false,
            }
        }
        expected == self.holders
    }
}

/// Initial state at t = 0: fleet placement, then a random permutation of
/// the grid dealt out cyclically (at most ceil(N / grid) holders per
/// subchannel), then desynchronized expiries uniform over
/// `[0, max SPS period]`.
pub fn bootstrap(config: &ValidatedConfig, kind: SchedulerKind, mut rng: SimRng) -> World {
    let grid = config.grid();
    let fleet = init_fleet(config, &mut rng);

    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.shuffle(&mut rng);
    let (_, max_life) = config.sps_period_range_ms();
    let mut holders = HolderMap::new(grid);
    let allocations: Vec<AllocationDecision> = (0..config.num_vehicles)
        .map(|v| {
            let flat = order[v % grid.len()];
            holders.insert(flat, v);
            AllocationDecision {
                vehicle_id: v,
                resource: grid.from_flat(flat).expect("permutation inside grid"),
                decided_at_ms: 0,
                sps_expiry_ms: rng.random_range(0..=max_life),
            }
        })
        .collect();

    let sensing = if kind.needs_sensing() {
        allocations
            .iter()
            .map(|a| {
                let mut s = SensingState::new(a.vehicle_id, grid, config.sensing_window_ms);
                s.set_own_resource(a.resource);
                s
            })
            .collect()
    } else {
        Vec::new()
    };

    World {
        time_ms: 0,
        fleet,
        allocations,
        sensing,
        shadowing: ShadowingTable::new(config),
        holders,
        rng,
    }
}

struct Transmission {
    tx: usize,
    subband: usize,
    /// Received power at every vehicle, 0 at the transmitter itself.
    power_mw: Vec<f64>,
    distance_m: Vec<f64>,
}

/// A single simulation run, advanced one subframe at a time.
pub struct Simulation<'c> {
    config: &'c ValidatedConfig,
    kind: SchedulerKind,
    seed: u64,
    budget: LinkBudget,
    max_range_m: f64,
    world: World,
    transmitting: Vec<bool>,
    tx_buf: Vec<Transmission>,
    /// Distance and received power per vehicle pair as of the last time
    /// their relative position changed.
    link_cache: Vec<(f64, f64)>,
    subband_total: Vec<f64>,
    sense_buf: Vec<f64>,
}

impl<'c> Simulation<'c> {
    pub fn new(config: &'c ValidatedConfig, kind: SchedulerKind, seed: u64) -> Self {
        let world = bootstrap(config, kind, ChaCha8Rng::seed_from_u64(seed));
        let n = config.num_vehicles;
        let pairs = world.shadowing.len();
        Self {
            config,
            kind,
            seed,
            budget: LinkBudget::new(config),
            max_range_m: config.max_eval_range_m(),
            world,
            transmitting: vec![false; n],
            tx_buf: Vec::new(),
            link_cache: vec![(f64::NAN, f64::NAN); pairs],
            subband_total: vec![0.0; config.num_subbands * n],
            sense_buf: vec![0.0; config.num_subbands],
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_finished(&self) -> bool {
        self.world.time_ms >= self.config.sim_duration_ms
    }

    /// Runs one subframe.
    pub fn step<O: RunObserver + ?Sized>(&mut self, observer: &mut O) -> Result<(), EngineError> {
        let cfg = self.config;
        let grid = cfg.grid();
        let n = cfg.num_vehicles;
        let nsb = cfg.num_subbands;
        let t = self.world.time_ms;
        let subframe = (t % cfg.num_subframes as u64) as usize;

        advance(&mut self.world.fleet, 1e-3, cfg.road_length_m);

        // Transmitters, ordered by sub-band then vehicle id.
        let mut count = 0;
        for flat in grid.subframe_range(subframe) {
            for &v in self.world.holders.holders(flat) {
                if self.tx_buf.len() == count {
                    self.tx_buf.push(Transmission {
                        tx: 0,
                        subband: 0,
                        power_mw: vec![0.0; n],
                        distance_m: vec![0.0; n],
                    });
                }
                let slot = &mut self.tx_buf[count];
                slot.tx = v;
                slot.subband = flat - subframe * nsb;
                self.transmitting[v] = true;
                observer.on_tx(&TxEvent {
                    time_ms: t,
                    tx_id: v,
                    resource: ResourceId::new(subframe, slot.subband),
                });
                count += 1;
            }
        }

        // Link gains from every transmitter to every vehicle.
        self.subband_total.fill(0.0);
        let fleet = &self.world.fleet;
        for slot in &mut self.tx_buf[..count] {
            let a = &fleet[slot.tx];
            for (v, b) in fleet.iter().enumerate() {
                if v == slot.tx {
                    slot.power_mw[v] = 0.0;
                    slot.distance_m[v] = 0.0;
                    continue;
                }
                let shadowing = &mut self.world.shadowing;
                let pair = shadowing.slot(slot.tx, v);
                let (shadow, moved) = shadowing.sample_moved(slot.tx, a.position_m, v, b.position_m, &mut self.world.rng);
                let (d, p) = if moved {
                    let d = distance_on_loop(
                        a.position_m,
                        a.lane,
                        b.position_m,
                        b.lane,
                        cfg.road_length_m,
                        cfg.lane_width_m,
                    );
                    let link = (d, self.budget.rx_power_mw(d, shadow));
                    self.link_cache[pair] = link;
                    link
                } else {
                    self.link_cache[pair]
                };
                slot.power_mw[v] = p;
                slot.distance_m[v] = d;
                self.subband_total[slot.subband * n + v] += p;
            }
        }

        // Reception at every vehicle in range of each transmitter.
        let txs = &self.tx_buf[..count];
        for slot in txs {
            for v in 0..n {
                let d = slot.distance_m[v];
                if v == slot.tx || d >= self.max_range_m {
                    continue;
                }
                let interference: f64 = txs
                    .iter()
                    .filter(|o| o.subband == slot.subband && o.tx != slot.tx)
                    .map(|o| o.power_mw[v])
                    .sum();
                let outcome = reception_from_linear(
                    slot.power_mw[v],
                    interference,
                    self.budget.noise_mw,
                    self.transmitting[v],
                    self.budget.threshold_db,
                );
                observer.on_rx(&RxRecord {
                    time_ms: t,
                    tx_id: slot.tx,
                    rx_id: v,
                    distance_m: d,
                    outcome,
                });
            }
        }

        if !self.world.sensing.is_empty() {
            for (v, sensing) in self.world.sensing.iter_mut().enumerate() {
                if self.transmitting[v] {
                    sensing.mask(t);
                } else {
                    for sb in 0..nsb {
                        self.sense_buf[sb] = self.subband_total[sb * n + v] + self.budget.noise_mw;
                    }
                    sensing.record(t, &self.sense_buf);
                }
            }
        }
        for slot in &self.tx_buf[..count] {
            self.transmitting[slot.tx] = false;
        }

        self.reschedule(t, observer)?;
        self.world.time_ms = t + 1;
        Ok(())
    }

    fn reschedule<O: RunObserver + ?Sized>(&mut self, t: u64, observer: &mut O) -> Result<(), EngineError> {
        let cfg = self.config;
        let expired: Vec<usize> = self
            .world
            .allocations
            .iter()
            .filter(|a| a.sps_expiry_ms <= t)
            .map(|a| a.vehicle_id)
            .collect();
        if expired.is_empty() {
            return Ok(());
        }

        // Without a full sensing window the current reservation is renewed.
        if self.kind.needs_sensing() && t + 1 < cfg.sensing_window_ms {
            for v in expired {
                let current = self.world.allocations[v];
                let decision = AllocationDecision {
                    vehicle_id: v,
                    resource: current.resource,
                    decided_at_ms: t,
                    sps_expiry_ms: t + draw_lifetime_ms(&mut self.world.rng, cfg),
                };
                self.apply(decision, None, observer);
            }
            return Ok(());
        }

        if self.kind.is_centralized() && !(t + 1).is_multiple_of(cfg.mode3_batch_period_ms) {
            return Ok(());
        }

        let wrap = |source| EngineError::Scheduler { time_ms: t, source };
        match self.kind {
            SchedulerKind::Mode4Sps => {
                for v in expired {
                    let sel = mode4::select(&self.world.sensing[v], t, &mut self.world.rng, cfg);
                    self.apply(sel.decision, Some(&sel.stats), observer);
                }
            }
            SchedulerKind::Mode3MinPower => {
                let reports: Vec<Vec<Option<f64>>> =
                    expired.iter().map(|&v| self.world.sensing[v].averages_mw()).collect();
                let decisions = mode3::min_power(
                    t,
                    &expired,
                    |v| {
                        expired
                            .binary_search(&v)
                            .ok()
                            .map(|i| reports[i].as_slice())
                    },
                    &mut self.world.rng,
                    cfg,
                )
                .map_err(wrap)?;
                for d in decisions {
                    self.apply(d, None, observer);
                }
            }
            SchedulerKind::Mode3MaxReuse => {
                let decisions = mode3::max_reuse(
                    t,
                    &expired,
                    &self.world.fleet,
                    &self.world.holders,
                    &mut self.world.rng,
                    cfg,
                )
                .map_err(wrap)?;
                for d in decisions {
                    self.apply(d, None, observer);
                }
            }
        }
        Ok(())
    }

    fn apply<O: RunObserver + ?Sized>(
        &mut self,
        decision: AllocationDecision,
        stats: Option<&CandidateStats>,
        observer: &mut O,
    ) {
        let grid = self.config.grid();
        let v = decision.vehicle_id;
        let old = grid
            .flat_index(self.world.allocations[v].resource)
            .expect("allocation inside grid");
        let new = grid.flat_index(decision.resource).expect("decision inside grid");
        self.world.holders.remove(old, v);
        self.world.holders.insert(new, v);
        self.world.allocations[v] = decision;
        if let Some(s) = self.world.sensing.get_mut(v) {
            s.set_own_resource(decision.resource);
        }
        observer.on_allocation(&decision, stats);
    }

    pub fn run_to_end<O: RunObserver + ?Sized>(&mut self, observer: &mut O) -> Result<(), EngineError> {
        while !self.is_finished() {
            self.step(observer)?;
        }
        Ok(())
    }
}

/// Runs a full simulation and returns its PRR counts.
pub fn run(config: &ValidatedConfig, kind: SchedulerKind, seed: u64) -> Result<SimResult, EngineError> {
    run_with_observer(config, kind, seed, &mut ())
}

/// As [`run`], additionally forwarding every event to `observer`.
pub fn run_with_observer<O: RunObserver + ?Sized>(
    config: &ValidatedConfig,
    kind: SchedulerKind,
    seed: u64,
    observer: &mut O,
) -> Result<SimResult, EngineError> {
    let mut acc = PrrAccumulator::new(config);
    let mut sim = Simulation::new(config, kind, seed);
    sim.run_to_end(&mut (&mut acc, observer))?;
    Ok(acc.into_result(kind.name(), seed))
}
