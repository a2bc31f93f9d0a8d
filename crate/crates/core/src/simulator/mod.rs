//! Discrete-time (1 s) microsimulation of the corridor: demand, vehicle
//! motion, lane changes, bus service, signal enforcement, and metrics.

pub mod arrivals;
pub mod dynamics;
pub mod metrics;
pub mod output;
pub mod planner;
pub mod prediction;
pub mod vehicle;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::controller::{self, ControllerState, PendingChange, PlanningView};
use crate::domain::{
    Lane, Movement, ScenarioConfig, Strategy, VehicleClass, VehicleId, V_MAX,
};
use crate::estimator::StepSnapshot;
use crate::kinematics::newell_params;
use crate::optimizer::{OptimizeError, CANDIDATE_CAP};

use arrivals::{Arrival, ArrivalStream};
use dynamics::{AdvanceMode, CoreState};
use metrics::{Metrics, VehicleRecord};
use output::{EventRow, TrajRow};
use vehicle::{BusPhase, Vehicle};

/// Seconds excluded from aggregate metrics at the start of a run.
pub const WARMUP: f64 = 300.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("vehicles {follower} and {leader} overlap at t={t}")]
    Overlap { t: f64, leader: VehicleId, follower: VehicleId },
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

/// Finished-run artifacts.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub metrics: Metrics,
    pub trajectory_csv: String,
    pub metrics_csv: String,
    pub events_csv: String,
}

/// One simulation in progress.
pub struct World {
    pub config: ScenarioConfig,
    core: CoreState,
    pub t: f64,
    arrivals: ArrivalStream,
    noise_rng: ChaCha8Rng,
    controller: ControllerState,
    marks: BTreeMap<VehicleId, PendingChange>,
    next_id: u64,
    metrics: Metrics,
    events: Vec<EventRow>,
    trajectory: Vec<TrajRow>,
}

impl World {
    pub fn new(config: ScenarioConfig) -> World {
        let arrivals = ArrivalStream::generate(&config);
        // Noise draws live on a separate stream from the arrival draws so
        // paired runs share arrivals exactly.
        let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
        noise_rng.set_stream(1);
        let core = CoreState::new(config.corridor, config.signal, config.d_rt);
        let metrics = Metrics::new(config.duration, WARMUP);
        World {
            config,
            core,
            t: 0.0,
            arrivals,
            noise_rng,
            controller: ControllerState::default(),
            marks: BTreeMap::new(),
            next_id: 0,
            metrics,
            events: Vec::new(),
            trajectory: Vec::new(),
        }
    }

    /// Runs a config to completion and emits its artifacts.
    pub fn run(config: ScenarioConfig) -> Result<RunResult, SimError> {
        let mut world = World::new(config);
        while world.t < world.config.duration {
            world.step()?;
        }
        Ok(world.finish())
    }

    /// Live snapshot at the current step (no predicted crossings).
    pub fn snapshot(&self) -> StepSnapshot {
        prediction::snapshot_of(&self.core, self.t, &BTreeMap::new())
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    /// Advances one second following the fixed step order: control,
    /// commands, lane changes, longitudinal update, removals, spawning.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.t;
        self.record_trajectory(t);

        if self.config.strategy == Strategy::Dbpl {
            self.control_step(t)?;
        }

        self.execute_grants(t);
        let moves = self.core.mandatory_lane_moves(t);
        for mv in &moves {
            self.log_lane(mv.id, t, mv.to);
        }

        let outcome = self.core.advance(t, 1.0, AdvanceMode::Plant { rng: &mut self.noise_rng });
        self.metrics.safety.emergency_clamps += outcome.emergency_clamps;
        self.metrics.safety.red_crossings += outcome.red_crossings;
        for entry in &outcome.pocket_entries {
            self.log_lane(entry.id, entry.t, Lane::Pocket);
        }
        for exit in &outcome.exits {
            let rec = self.metrics.vehicles.get_mut(&exit.vehicle.id).expect("exit without record");
            rec.exit = Some(exit.t_cross);
            rec.lane_history.push((exit.t_cross, Lane::Departed));
        }

        self.scan_invariants(t)?;
        self.spawn(t + 1.0);
        self.t = t + 1.0;
        Ok(())
    }

    fn control_step(&mut self, t: f64) -> Result<(), SimError> {
        let snap = self.snapshot();
        let horizon = if self.controller.outstanding.is_empty() {
            let window = self.config.planning_window(t);
            let k_lc_steps = (self.config.k_lc / self.config.dk).round().max(1.0) as usize;
            Some(prediction::predict(&self.core, window, k_lc_steps))
        } else {
            None
        };
        let k_lc_steps = (self.config.k_lc / self.config.dk).round().max(1.0) as usize;
        let view = PlanningView {
            now: &snap,
            horizon: horizon.as_ref(),
            corridor: &self.config.corridor,
            signal: &self.config.signal,
            omega_p: self.config.omega_p,
            k_lc_steps,
            candidate_cap: CANDIDATE_CAP,
        };
        let (next, commands) = controller::tick(&self.controller, &view)?;
        self.controller = next;
        for cmd in &commands {
            let action = match cmd.action {
                controller::CommandAction::Recommend => "recommend",
                controller::CommandAction::Cancel => "cancel",
            };
            self.events.push(EventRow { t, vehicle: cmd.vehicle, action, reason: cmd.reason });
        }
        let core = &self.core;
        controller::apply_commands(&commands, &mut self.marks, |id| core.find_vehicle(id).is_some());
        Ok(())
    }

    /// Granted CAVs change lanes at the first step at or after their
    /// commanded time when the live bumper gaps allow it.
    fn execute_grants(&mut self, t: f64) {
        if self.marks.is_empty() {
            return;
        }
        let mut due: Vec<(f64, VehicleId)> = self
            .marks
            .iter()
            .filter(|(_, mark)| t >= mark.at)
            .filter_map(|(id, _)| {
                self.core
                    .lane(Lane::General)
                    .iter()
                    .find(|v| v.id == *id)
                    .map(|v| (v.x, *id))
            })
            .collect();
        // Most downstream first, so a pair granted into one gap stacks up
        // leader-first.
        due.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (_, id) in due {
            let Some(idx) = self.core.general.iter().position(|v| v.id == id) else {
                continue;
            };
            let (x, length) = (self.core.general[idx].x, self.core.general[idx].length);
            if x < self.core.corridor.x_n && self.core.bus_change_safe(x, length) {
                let veh = self.core.general.remove(idx);
                CoreState::insert_sorted(&mut self.core.bus, veh);
                self.marks.remove(&id);
                self.events.push(EventRow { t, vehicle: id, action: "execute", reason: "lane_change" });
                self.log_lane(id, t, Lane::Bus);
                if let Some(rec) = self.metrics.vehicles.get_mut(&id) {
                    rec.used_bus_lane = true;
                }
            }
        }
    }

    fn log_lane(&mut self, id: VehicleId, t: f64, lane: Lane) {
        if let Some(rec) = self.metrics.vehicles.get_mut(&id) {
            rec.lane_history.push((t, lane));
        }
    }

    fn record_trajectory(&mut self, t: f64) {
        let mut rows: Vec<TrajRow> = Vec::new();
        for (lane, list) in [
            (Lane::General, &self.core.general),
            (Lane::Bus, &self.core.bus),
            (Lane::Pocket, &self.core.pocket),
        ] {
            for v in list {
                rows.push(TrajRow {
                    t,
                    id: v.id,
                    class: v.class,
                    movement: v.movement,
                    lane,
                    x: v.x,
                    v: v.v,
                });
            }
        }
        rows.sort_by_key(|r| r.id);
        self.trajectory.extend(rows);
    }

    fn scan_invariants(&mut self, t: f64) -> Result<(), SimError> {
        for list in [&self.core.general, &self.core.bus, &self.core.pocket] {
            for pair in list.windows(2) {
                let gap = pair[0].rear() - pair[1].x;
                if gap < -1e-9 {
                    self.metrics.safety.gap_violations += 1;
                    return Err(SimError::Overlap {
                        t,
                        leader: pair[0].id,
                        follower: pair[1].id,
                    });
                }
            }
        }
        if self.config.strategy == Strategy::Ebl {
            let impure = self
                .core
                .bus
                .iter()
                .filter(|v| v.class.is_car() && v.movement == Movement::Through)
                .count();
            self.metrics.safety.ebl_purity_violations += impure as u64;
        }
        Ok(())
    }

    /// Admits due arrivals when the entry cell is free; blocked arrivals
    /// queue and their waiting counts toward travel time.
    fn spawn(&mut self, now: f64) {
        loop {
            let Some(head) = self.arrivals.cars.front() else { break };
            if head.scheduled >= now {
                break;
            }
            let Some(v_entry) = entry_speed(&self.core.general, head.class) else { break };
            let arrival = self.arrivals.cars.pop_front().unwrap();
            self.admit(arrival, Lane::General, v_entry, now);
        }
        loop {
            let Some(head) = self.arrivals.buses.front() else { break };
            if head.scheduled >= now {
                break;
            }
            let Some(v_entry) = entry_speed(&self.core.bus, head.class) else { break };
            let arrival = self.arrivals.buses.pop_front().unwrap();
            self.admit(arrival, Lane::Bus, v_entry, now);
        }
    }

    fn admit(&mut self, arrival: Arrival, lane: Lane, v_entry: f64, now: f64) {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        let veh = Vehicle {
            id,
            class: arrival.class,
            movement: arrival.movement,
            x: 0.0,
            v: v_entry,
            x_prev: 0.0,
            v_prev: v_entry,
            length: arrival.class.length(),
            scheduled_entry: arrival.scheduled,
            entered_at: now,
            dwell_total: arrival.dwell,
            bus_phase: (arrival.class == VehicleClass::Cab).then_some(BusPhase::Approach),
        };
        match lane {
            Lane::General => self.core.general.push(veh),
            Lane::Bus => self.core.bus.push(veh),
            _ => unreachable!("vehicles enter in the general or bus lane"),
        }
        self.metrics.vehicles.insert(
            id,
            VehicleRecord {
                id,
                class: arrival.class,
                movement: arrival.movement,
                scheduled_entry: arrival.scheduled,
                entered_at: now,
                exit: None,
                lane_history: vec![(now, lane)],
                used_bus_lane: false,
            },
        );
    }

    /// Finalizes metrics and renders the artifacts.
    pub fn finish(mut self) -> RunResult {
        for list in [&self.core.general, &self.core.bus, &self.core.pocket] {
            for v in list {
                self.metrics.remaining.push((v.class, v.movement));
            }
        }
        let trajectory_csv = output::trajectory_csv(&self.trajectory);
        let metrics_csv = output::metrics_csv(&self.metrics);
        let events_csv = output::events_csv(&self.events);
        RunResult { metrics: self.metrics, trajectory_csv, metrics_csv, events_csv }
    }
}

/// Entry speed consistent with the Newell spacing behind the lane's last
/// vehicle, or None when the entry cell is blocked.
fn entry_speed(lane: &[Vehicle], class: VehicleClass) -> Option<f64> {
    let Some(last) = lane.last() else { return Some(V_MAX) };
    let p = newell_params(class, VehicleClass::Cav);
    let d = p.d - crate::domain::CAR_LEN + last.length;
    let headroom = last.x - d;
    if headroom < 0.0 {
        return None;
    }
    Some((headroom / p.tau).clamp(0.0, V_MAX))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ScenarioConfig {
        ScenarioConfig::parse_str(text).unwrap()
    }

    #[test]
    fn zero_duration_produces_header_only() {
        let result = World::run(cfg("duration=0")).unwrap();
        assert_eq!(result.trajectory_csv, format!("{}\n", output::TRAJECTORY_HEADER));
    }

    #[test]
    fn short_run_spawns_and_conserves() {
        let result = World::run(cfg("duration=200\nq_veh=720\nseed=4")).unwrap();
        assert!(!result.metrics.vehicles.is_empty());
        assert!(result.metrics.conservation_ok());
        assert_eq!(result.metrics.safety.gap_violations, 0);
        assert_eq!(result.metrics.safety.red_crossings, 0);
    }

    #[test]
    fn determinism_same_seed_same_bytes() {
        let a = World::run(cfg("duration=400\nmpr=0.4\nstrategy=dbpl\nseed=12")).unwrap();
        let b = World::run(cfg("duration=400\nmpr=0.4\nstrategy=dbpl\nseed=12")).unwrap();
        assert_eq!(a.trajectory_csv, b.trajectory_csv);
        assert_eq!(a.metrics_csv, b.metrics_csv);
        assert_eq!(a.events_csv, b.events_csv);
    }

    #[test]
    fn mpr_zero_strategies_identical() {
        let ebl = World::run(cfg("duration=400\nmpr=0\nseed=3\nstrategy=ebl")).unwrap();
        let dbpl = World::run(cfg("duration=400\nmpr=0\nseed=3\nstrategy=dbpl")).unwrap();
        assert_eq!(ebl.metrics_csv, dbpl.metrics_csv);
        assert_eq!(ebl.trajectory_csv, dbpl.trajectory_csv);
    }

    #[test]
    fn ebl_keeps_through_cars_out_of_bus_lane() {
        let result = World::run(cfg("duration=600\nmpr=0.5\nseed=8\nstrategy=ebl")).unwrap();
        assert_eq!(result.metrics.safety.ebl_purity_violations, 0);
        assert!(result
            .metrics
            .vehicles
            .values()
            .all(|r| r.class == VehicleClass::Cab || !r.used_bus_lane));
    }

    #[test]
    fn dbpl_moves_some_cavs_under_congestion() {
        let result =
            World::run(cfg("duration=900\nmpr=0.4\nq_veh=860\nseed=2\nstrategy=dbpl")).unwrap();
        let moved = result.metrics.vehicles.values().filter(|r| r.used_bus_lane).count();
        assert!(moved > 0, "expected at least one granted lane change");
        assert_eq!(result.metrics.safety.gap_violations, 0);
        assert_eq!(result.metrics.safety.red_crossings, 0);
    }

    #[test]
    fn buses_dwell_and_depart() {
        let result = World::run(cfg("duration=600\nseed=6")).unwrap();
        let buses: Vec<_> = result
            .metrics
            .vehicles
            .values()
            .filter(|r| r.class == VehicleClass::Cab && r.exit.is_some())
            .collect();
        assert!(!buses.is_empty());
        for bus in buses {
            // Travel must exceed free-flow plus the minimum dwell.
            let free_flow = 400.0 / 14.0;
            assert!(bus.travel_time().unwrap() > free_flow + 5.0);
        }
    }

    #[test]
    fn scenario_b_right_turners_use_pocket() {
        let result = World::run(cfg(
            "duration=900\npocket=yes\nright_turn_ratio=0.3\nmpr=0.2\nseed=5\nstrategy=ebl",
        ))
        .unwrap();
        let turned: Vec<_> = result
            .metrics
            .vehicles
            .values()
            .filter(|r| r.movement == Movement::RightTurn && r.exit.is_some())
            .collect();
        assert!(!turned.is_empty(), "no right-turner completed");
        for r in &turned {
            assert!(
                r.lane_history.iter().any(|(_, lane)| *lane == Lane::Pocket),
                "right-turner {} never reached the pocket: {:?}",
                r.id,
                r.lane_history
            );
        }
        assert_eq!(result.metrics.safety.ebl_purity_violations, 0);
    }
}
