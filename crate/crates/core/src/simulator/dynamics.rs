//! Deterministic corridor dynamics shared by the plant and the
//! controller's prediction twin. The only differences between the two are
//! the human-driver speed noise and dwell-time knowledge, both switched by
//! `AdvanceMode`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::domain::{
    Corridor, Lane, Movement, Phase, SignalPlan, VehicleClass, VehicleId, A_MAX, BUS_LEN, D_SAFE,
    GREEN_REACTION, V_MAX,
};
use crate::estimator::{BoundaryRecord, BoundaryRecords};

use super::planner::{
    accel_from_bounds, braking_feasible_speed, glide_bound, idm_accel, idm_free_accel,
    newell_follow_bound, planned_stop_bound, LeaderView, STOP_SETBACK,
};
use super::vehicle::{BusPhase, Vehicle};

/// Gap between two dwelling berths in m.
const BERTH_GAP: f64 = 2.0;
/// Hard floor on bumper gaps enforced by the integration clamp.
const CONTACT_MARGIN: f64 = 0.05;
/// A right-turner holds this far short of the no-changing zone while it
/// waits for a bus-lane gap.
const HOLD_BACK: f64 = 1.0;
/// Truncation bound for the human speed noise draw.
const NOISE_CLAMP: f64 = 1.5;
/// Human speed noise standard deviation in m/s.
const NOISE_STD: f64 = 0.5;

/// Plant runs draw human noise and consume dwell timers; prediction runs
/// do neither (dwell durations are not observable in advance).
pub enum AdvanceMode<'a> {
    Plant { rng: &'a mut ChaCha8Rng },
    Prediction,
}

impl AdvanceMode<'_> {
    fn is_plant(&self) -> bool {
        matches!(self, AdvanceMode::Plant { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    StopBar,
    PocketExit,
}

/// A vehicle leaving the corridor this step.
#[derive(Clone, Debug)]
pub struct Exit {
    pub vehicle: Vehicle,
    pub lane: Lane,
    pub t_cross: f64,
    pub v_cross: f64,
    pub kind: ExitKind,
}

/// A right-turner moving from the bus lane into the pocket at x_w.
#[derive(Clone, Copy, Debug)]
pub struct PocketEntry {
    pub id: VehicleId,
    pub t: f64,
    pub v: f64,
}

#[derive(Clone, Debug, Default)]
pub struct AdvanceOutcome {
    pub exits: Vec<Exit>,
    pub pocket_entries: Vec<PocketEntry>,
    pub emergency_clamps: u64,
    pub red_crossings: u64,
}

/// A lane change executed at a step boundary.
#[derive(Clone, Copy, Debug)]
pub struct LaneMove {
    pub id: VehicleId,
    pub from: Lane,
    pub to: Lane,
    /// Set when the move crossed the pocket entrance (records t at x_w).
    pub pocket_entry: bool,
}

/// Mutable corridor state: per-lane vehicle lists (most downstream first),
/// boundary records, and berth bookkeeping.
#[derive(Clone, Debug)]
pub struct CoreState {
    pub corridor: Corridor,
    pub signal: SignalPlan,
    pub d_rt: f64,
    pub general: Vec<Vehicle>,
    pub bus: Vec<Vehicle>,
    pub pocket: Vec<Vehicle>,
    pub records: BoundaryRecords,
    pub berths: BTreeMap<VehicleId, usize>,
}

impl CoreState {
    pub fn new(corridor: Corridor, signal: SignalPlan, d_rt: f64) -> CoreState {
        CoreState {
            corridor,
            signal,
            d_rt,
            general: Vec::new(),
            bus: Vec::new(),
            pocket: Vec::new(),
            records: BoundaryRecords::default(),
            berths: BTreeMap::new(),
        }
    }

    pub fn lane(&self, lane: Lane) -> &[Vehicle] {
        match lane {
            Lane::General => &self.general,
            Lane::Bus => &self.bus,
            Lane::Pocket => &self.pocket,
            Lane::Departed => &[],
        }
    }

    pub fn berth_x(&self, index: usize) -> f64 {
        self.corridor.x_s - index as f64 * (BUS_LEN + BERTH_GAP)
    }

    pub fn find_vehicle(&self, id: VehicleId) -> Option<(Lane, &Vehicle)> {
        for (lane, list) in
            [(Lane::General, &self.general), (Lane::Bus, &self.bus), (Lane::Pocket, &self.pocket)]
        {
            if let Some(v) = list.iter().find(|v| v.id == id) {
                return Some((lane, v));
            }
        }
        None
    }

    /// Inserts keeping the lane ordered by descending position.
    pub fn insert_sorted(list: &mut Vec<Vehicle>, vehicle: Vehicle) {
        let idx = list.partition_point(|v| v.x > vehicle.x);
        list.insert(idx, vehicle);
    }

    fn bus_neighbors_at(&self, x: f64) -> (Option<&Vehicle>, Option<&Vehicle>) {
        let mut leader = None;
        let mut follower = None;
        for v in &self.bus {
            if v.x >= x {
                leader = Some(v);
            } else {
                follower = Some(v);
                break;
            }
        }
        (leader, follower)
    }

    fn pocket_neighbors_at(&self, x: f64) -> (Option<&Vehicle>, Option<&Vehicle>) {
        let mut leader = None;
        let mut follower = None;
        for v in &self.pocket {
            if v.x >= x {
                leader = Some(v);
            } else {
                follower = Some(v);
                break;
            }
        }
        (leader, follower)
    }

    /// Bumper-gap safety check for a lane change into the bus lane at `x`.
    pub fn bus_change_safe(&self, x: f64, length: f64) -> bool {
        let (leader, follower) = self.bus_neighbors_at(x);
        let lead_ok = leader.is_none_or(|l| l.rear() - x >= D_SAFE);
        let follow_ok = follower.is_none_or(|f| x - length - f.x >= D_SAFE);
        lead_ok && follow_ok
    }

    fn pocket_entry_clear(&self, x: f64, length: f64) -> bool {
        let (leader, follower) = self.pocket_neighbors_at(x);
        let lead_ok = leader.is_none_or(|l| l.rear() - x >= 0.3);
        let follow_ok = follower.is_none_or(|f| x - length - f.x >= 0.3);
        lead_ok && follow_ok
    }

    /// Pocket jammed right at the entrance: a bus-lane right-turner must
    /// hold short of x_w until it clears.
    fn pocket_entrance_blocked(&self) -> bool {
        let Some(x_w) = self.corridor.x_w else { return false };
        self.pocket.iter().any(|v| v.rear() < x_w + 2.0 && v.x >= x_w - 0.5)
    }

    /// Mandatory step-boundary moves: right-turners borrowing the bus lane
    /// inside their entry window, and instant pocket entry at or past x_w.
    pub fn mandatory_lane_moves(&mut self, t: f64) -> Vec<LaneMove> {
        let mut moves = Vec::new();
        let Some(x_w) = self.corridor.x_w else { return moves };

        // Bus-lane right-turners at or past the entrance hop immediately.
        let mut i = 0;
        while i < self.bus.len() {
            let v = &self.bus[i];
            if v.movement == Movement::RightTurn
                && v.x >= x_w
                && self.pocket_entry_clear(v.x, v.length)
            {
                let veh = self.bus.remove(i);
                self.records.pocket_entrance =
                    BoundaryRecord { t, v: veh.v, class: veh.class };
                moves.push(LaneMove { id: veh.id, from: Lane::Bus, to: Lane::Pocket, pocket_entry: true });
                Self::insert_sorted(&mut self.pocket, veh);
            } else {
                i += 1;
            }
        }

        // General-lane right-turners seek a bus-lane slot inside the window.
        let window_start = x_w - self.d_rt;
        let mut i = 0;
        while i < self.general.len() {
            let v = &self.general[i];
            let wants = v.movement == Movement::RightTurn
                && v.x >= window_start
                && v.x < self.corridor.x_n;
            if !wants {
                i += 1;
                continue;
            }
            let (x, length) = (v.x, v.length);
            if x >= x_w {
                if self.pocket_entry_clear(x, length) && self.bus_change_safe(x, length) {
                    let veh = self.general.remove(i);
                    self.records.pocket_entrance =
                        BoundaryRecord { t, v: veh.v, class: veh.class };
                    moves.push(LaneMove {
                        id: veh.id,
                        from: Lane::General,
                        to: Lane::Pocket,
                        pocket_entry: true,
                    });
                    Self::insert_sorted(&mut self.pocket, veh);
                    continue;
                }
            } else if self.bus_change_safe(x, length) {
                let veh = self.general.remove(i);
                moves.push(LaneMove { id: veh.id, from: Lane::General, to: Lane::Bus, pocket_entry: false });
                Self::insert_sorted(&mut self.bus, veh);
                continue;
            }
            i += 1;
        }
        moves
    }

    /// Dwell bookkeeping run at the top of each step: berth assignment,
    /// arrival at a berth, and (plant only) dwell countdown and departure.
    fn bus_service_transitions(&mut self, reveal_dwell: bool, dt: f64) {
        // Departures and countdown first so berths free up.
        for v in self.bus.iter_mut() {
            if let Some(BusPhase::Dwelling { remaining, berth }) = v.bus_phase {
                if reveal_dwell {
                    let left = remaining - dt;
                    if left <= 0.0 {
                        v.bus_phase = Some(BusPhase::Departing);
                        self.berths.remove(&v.id);
                    } else {
                        v.bus_phase = Some(BusPhase::Dwelling { remaining: left, berth });
                    }
                }
            }
        }
        // Arrivals: an assigned bus that has come to rest at (or slightly
        // past, after a late berth grant) its berth starts dwelling.
        for v in self.bus.iter_mut() {
            if v.bus_phase == Some(BusPhase::Approach) {
                if let Some(&berth) = self.berths.get(&v.id) {
                    let target = self.corridor.x_s - berth as f64 * (BUS_LEN + BERTH_GAP);
                    if v.v <= 0.1 && v.x >= target - 0.5 && v.x <= target + 15.0 {
                        v.bus_phase =
                            Some(BusPhase::Dwelling { remaining: v.dwell_total, berth });
                    }
                }
            }
        }
        // Assignment: each unassigned approaching bus takes the most
        // downstream free berth not blocked by a standing leader. Moving
        // leaders will clear; the follow bound covers the interim.
        let taken: Vec<usize> = self.berths.values().copied().collect();
        let mut newly_taken = taken;
        for i in 0..self.bus.len() {
            let v = &self.bus[i];
            if v.class != VehicleClass::Cab
                || v.bus_phase != Some(BusPhase::Approach)
                || self.berths.contains_key(&v.id)
                || v.x > self.corridor.x_s + 0.5
            {
                continue;
            }
            let blocker = (i > 0).then(|| &self.bus[i - 1]).filter(|l| l.v <= 0.1);
            for berth in 0..self.corridor.stop_capacity {
                if newly_taken.contains(&berth) {
                    continue;
                }
                let bx = self.corridor.x_s - berth as f64 * (BUS_LEN + BERTH_GAP);
                let reachable = blocker.is_none_or(|l| l.rear() > bx + 0.5);
                if reachable {
                    self.berths.insert(self.bus[i].id, berth);
                    newly_taken.push(berth);
                    break;
                }
            }
        }
    }

    /// One integration step: updates every lane, detects boundary
    /// crossings, and removes departed vehicles.
    pub fn advance(&mut self, t: f64, dt: f64, mut mode: AdvanceMode<'_>) -> AdvanceOutcome {
        let mut outcome = AdvanceOutcome::default();
        self.bus_service_transitions(mode.is_plant(), dt);

        let phase = self.signal.phase_at(t);
        let green_started =
            phase == Phase::Green && t >= dt && self.signal.phase_at(t - dt) == Phase::Red;
        let pocket_blocked = self.pocket_entrance_blocked();

        // Pocket first, then bus (whose right-turners may splice into the
        // pocket mid-step), then general.
        let mut pocket = std::mem::take(&mut self.pocket);
        self.update_lane(&mut pocket, Lane::Pocket, t, dt, green_started, false, &mut mode, &mut outcome);
        self.pocket = pocket;

        let mut bus = std::mem::take(&mut self.bus);
        self.update_lane(&mut bus, Lane::Bus, t, dt, green_started, pocket_blocked, &mut mode, &mut outcome);
        self.bus = bus;
        self.split_pocket_entries(t, dt, &mut outcome);

        let mut general = std::mem::take(&mut self.general);
        self.update_lane(&mut general, Lane::General, t, dt, green_started, false, &mut mode, &mut outcome);
        self.general = general;

        self.collect_exits(t, dt, phase, &mut outcome);
        outcome
    }

    #[allow(clippy::too_many_arguments)]
    fn update_lane(
        &self,
        vehicles: &mut [Vehicle],
        lane: Lane,
        t: f64,
        dt: f64,
        green_started: bool,
        pocket_blocked: bool,
        mode: &mut AdvanceMode<'_>,
        outcome: &mut AdvanceOutcome,
    ) {
        let old: Vec<(f64, f64, f64)> = vehicles.iter().map(|v| (v.x, v.v, v.length)).collect();
        for i in 0..vehicles.len() {
            vehicles[i].x_prev = vehicles[i].x;
            vehicles[i].v_prev = vehicles[i].v;
            let leader_new = (i > 0).then(|| LeaderView {
                x: vehicles[i - 1].x,
                v: vehicles[i - 1].v,
                length: vehicles[i - 1].length,
            });
            let leader_old = (i > 0).then(|| old[i - 1]);
            let veh = &vehicles[i];

            if veh.is_dwelling() {
                continue;
            }

            let (x, v) = (veh.x, veh.v);
            let signal_bound_applies = veh.movement == Movement::Through && lane != Lane::Pocket;

            let (mut x_new, mut v_new);
            if veh.class == VehicleClass::Hdv {
                let (mut accel, emergency) = match leader_old {
                    Some((lx, lv, llen)) => idm_accel(v, lx - llen - x, lv),
                    None => (idm_free_accel(v), false),
                };
                if emergency {
                    outcome.emergency_clamps += 1;
                }
                // Stop lines (the red bar, hold points) use a late-braking
                // cap rather than IDM's long anticipatory approach: drivers
                // brake at the last comfortable moment for a fixed target.
                let mut stop_cap = |stop_x: f64, accel: f64| -> f64 {
                    let cap_v = braking_feasible_speed(v, stop_x - x, dt);
                    accel.min((cap_v - v) / dt)
                };
                if signal_bound_applies && self.signal.phase_at(t) == Phase::Red {
                    accel = stop_cap(self.corridor.x_c - STOP_SETBACK, accel);
                }
                if veh.movement == Movement::RightTurn {
                    if lane == Lane::General {
                        accel = stop_cap(self.corridor.x_n - HOLD_BACK, accel);
                    } else if lane == Lane::Bus && pocket_blocked {
                        accel = stop_cap(self.corridor.x_w.unwrap() - 0.5, accel);
                    }
                }
                accel = accel.clamp(-A_MAX, A_MAX);
                let reaction_hold = green_started
                    && signal_bound_applies
                    && v < 0.5
                    && x > self.corridor.x_c - 6.0;
                if reaction_hold {
                    let run = dt - GREEN_REACTION;
                    v_new = (v + accel * run).clamp(0.0, V_MAX);
                    x_new = x + v * GREEN_REACTION + (v + v_new) / 2.0 * run;
                } else {
                    v_new = (v + accel * dt).clamp(0.0, V_MAX);
                    x_new = x + (v + v_new) / 2.0 * dt;
                }
                if let AdvanceMode::Plant { rng } = mode {
                    let eps: f64 = rng.sample(Normal::new(0.0, NOISE_STD).unwrap());
                    let eps = eps.clamp(-NOISE_CLAMP, NOISE_CLAMP);
                    if v_new > 0.3 {
                        v_new = (v_new + eps).clamp(0.0, V_MAX);
                    }
                }
            } else {
                // Planned vehicle: assemble next-step speed bounds. The
                // follow rule reads the leader's pre-update state (the
                // Newell trajectory shift at this resolution).
                let mut bounds = Vec::with_capacity(3);
                if let Some((lx, lv, llen)) = leader_old {
                    bounds.push(newell_follow_bound(
                        x,
                        v,
                        veh.class,
                        &LeaderView { x: lx, v: lv, length: llen },
                        dt,
                    ));
                }
                match veh.bus_phase {
                    Some(BusPhase::Approach) => {
                        // Unassigned buses stage behind the berths, so a
                        // berth grant always arrives at crawling speed and
                        // can never be overshot.
                        let stop_x = match self.berths.get(&veh.id) {
                            Some(&berth) => self.berth_x(berth),
                            None => self.berth_x(self.corridor.stop_capacity),
                        };
                        bounds.push(planned_stop_bound(x, v, veh.class, stop_x, dt));
                    }
                    Some(BusPhase::Departing) | None => {
                        if signal_bound_applies {
                            bounds.push(glide_bound(x, v, t, self.corridor.x_c, &self.signal, dt));
                        }
                    }
                    Some(BusPhase::Dwelling { .. }) => unreachable!(),
                }
                if veh.movement == Movement::RightTurn {
                    if lane == Lane::General {
                        bounds.push(planned_stop_bound(
                            x,
                            v,
                            veh.class,
                            self.corridor.x_n - HOLD_BACK,
                            dt,
                        ));
                    } else if lane == Lane::Bus && pocket_blocked {
                        bounds.push(planned_stop_bound(
                            x,
                            v,
                            veh.class,
                            self.corridor.x_w.unwrap() - 0.5,
                            dt,
                        ));
                    }
                }
                let accel = accel_from_bounds(v, &bounds, dt);
                v_new = (v + accel * dt).clamp(0.0, V_MAX);
                x_new = x + (v + v_new) / 2.0 * dt;
            }

            // Hard red clamp: a through vehicle never crosses in red.
            if signal_bound_applies
                && self.signal.phase_at(t) == Phase::Red
                && x_new > self.corridor.x_c - 0.01
            {
                x_new = (self.corridor.x_c - 0.01).max(x);
                v_new = (2.0 * (x_new - x) / dt - v).max(0.0);
            }
            // Hard overlap clamp against the leader's updated position.
            if let Some(l) = leader_new {
                let max_x = l.x - l.length - CONTACT_MARGIN;
                if x_new > max_x {
                    x_new = max_x.max(x);
                    v_new = (2.0 * (x_new - x) / dt - v).max(0.0);
                }
            }

            vehicles[i].x = x_new;
            vehicles[i].v = v_new;
        }
    }

    /// Moves bus-lane right-turners that crossed x_w this step into the
    /// pocket, recording their crossing; also refreshes the x_w record for
    /// through vehicles passing it.
    fn split_pocket_entries(&mut self, t: f64, dt: f64, outcome: &mut AdvanceOutcome) {
        let Some(x_w) = self.corridor.x_w else { return };
        let mut i = 0;
        while i < self.bus.len() {
            let v = &self.bus[i];
            if v.x >= x_w && v.x_prev < x_w {
                let frac = ((x_w - v.x_prev) / (v.x - v.x_prev).max(1e-9)).clamp(0.0, 1.0);
                let t_w = t + frac * dt;
                let v_w = v.v_prev + frac * (v.v - v.v_prev);
                self.records.pocket_entrance = BoundaryRecord { t: t_w, v: v_w, class: v.class };
                if v.movement == Movement::RightTurn {
                    let mut veh = self.bus.remove(i);
                    // Keep clear of pocket occupants at the splice point.
                    if let (Some(l), _) = self.pocket_neighbors_at(veh.x) {
                        let max_x = l.rear() - CONTACT_MARGIN;
                        veh.x = veh.x.min(max_x);
                    }
                    outcome.pocket_entries.push(PocketEntry { id: veh.id, t: t_w, v: v_w });
                    Self::insert_sorted(&mut self.pocket, veh);
                    continue;
                }
            }
            i += 1;
        }
    }

    fn collect_exits(&mut self, t: f64, dt: f64, phase: Phase, outcome: &mut AdvanceOutcome) {
        let x_c = self.corridor.x_c;
        for (lane, list) in [
            (Lane::General, &mut self.general),
            (Lane::Bus, &mut self.bus),
            (Lane::Pocket, &mut self.pocket),
        ] {
            let mut i = 0;
            while i < list.len() {
                if list[i].x < x_c {
                    i += 1;
                    continue;
                }
                let veh = list.remove(i);
                let frac =
                    ((x_c - veh.x_prev) / (veh.x - veh.x_prev).max(1e-9)).clamp(0.0, 1.0);
                let t_cross = t + frac * dt;
                let v_cross = veh.v_prev + frac * (veh.v - veh.v_prev);
                let kind = if lane == Lane::Pocket { ExitKind::PocketExit } else { ExitKind::StopBar };
                if kind == ExitKind::StopBar {
                    if phase == Phase::Red {
                        outcome.red_crossings += 1;
                    }
                    let record = BoundaryRecord { t: t_cross, v: v_cross, class: veh.class };
                    match lane {
                        Lane::General => self.records.general_stop_bar = record,
                        Lane::Bus => self.records.bus_stop_bar = record,
                        _ => {}
                    }
                }
                outcome.exits.push(Exit { v_cross, t_cross, vehicle: veh, lane, kind });
            }
        }
    }
}
