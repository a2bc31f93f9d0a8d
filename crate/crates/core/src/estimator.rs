//! Passing-state estimation: given a snapshot of both lanes, the signal
//! plan and a candidate set of granted lane changes, estimate every
//! vehicle's stop-bar departure time.
//!
//! The bus lane carries one virtual mirror per general-lane CAV so a
//! candidate grant can be priced without committing it: an ungranted mirror
//! inherits its predecessor's estimates and is skipped by real vehicles'
//! following chains; a granted mirror turns real at the CAV's position and
//! the CAV's general-lane slot turns virtual in the same way.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{
    Corridor, Lane, Movement, PlanningWindow, SignalPlan, VehicleClass, VehicleId, VehicleState,
    A_MAX, GREEN_REACTION, STARTUP_PASS, V_MAX,
};
use crate::kinematics::{min_headway, min_travel_time, newell_params};

/// Last real crossing of a boundary: time, speed and crosser class. The
/// sentinel (-inf, v_max) leaves a cold-start lane unconstrained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryRecord {
    pub t: f64,
    pub v: f64,
    pub class: VehicleClass,
}

impl Default for BoundaryRecord {
    fn default() -> Self {
        BoundaryRecord { t: f64::NEG_INFINITY, v: V_MAX, class: VehicleClass::Cav }
    }
}

impl BoundaryRecord {
    pub fn is_set(&self) -> bool {
        self.t.is_finite()
    }
}

/// Boundary records for both lanes at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundaryRecords {
    pub bus_stop_bar: BoundaryRecord,
    pub general_stop_bar: BoundaryRecord,
    /// Last bus-lane vehicle to pass the pocket entrance x_w.
    pub pocket_entrance: BoundaryRecord,
}

/// Which boundary a vehicle exited through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossedBoundary {
    StopBar,
    PocketEntrance,
}

/// A boundary crossing that has already happened (in history or inside the
/// predicted horizon), i.e. shared-trajectory data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub t: f64,
    pub v: f64,
    pub boundary: CrossedBoundary,
}

/// Real-vehicle states at one planning step, plus everything the chains
/// need to anchor their heads: boundary records as of this step and the
/// crossings accumulated since the window start.
#[derive(Clone, Debug)]
pub struct StepSnapshot {
    pub k: f64,
    /// Bus-lane vehicles, most downstream first.
    pub bus: Vec<VehicleState>,
    /// General-lane vehicles, most downstream first.
    pub general: Vec<VehicleState>,
    pub records: BoundaryRecords,
    pub crossings: BTreeMap<VehicleId, Crossing>,
}

/// Predicted no-action states over a planning window. `steps[n]` holds the
/// snapshot at k0 + n*dk; a few trailing steps beyond the horizon cover the
/// post-change ordering check at k + k_lc.
#[derive(Clone, Debug)]
pub struct HorizonStates {
    pub window: PlanningWindow,
    pub steps: Vec<StepSnapshot>,
}

impl HorizonStates {
    pub fn step(&self, index: usize) -> &StepSnapshot {
        &self.steps[index]
    }

    /// Predicted (x, v, lane) of a vehicle at a step, if still present.
    pub fn state_at(&self, index: usize, id: VehicleId) -> Option<(f64, f64, Lane)> {
        let snap = self.steps.get(index)?;
        for v in &snap.general {
            if v.id == id {
                return Some((v.x, v.v, Lane::General));
            }
        }
        for v in &snap.bus {
            if v.id == id {
                return Some((v.x, v.v, Lane::Bus));
            }
        }
        None
    }
}

/// Per-lane membership split at a step: past the stop bar, between the
/// pocket entrance and the stop bar, and upstream of the pocket entrance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LanePartition {
    pub passed: Vec<VehicleId>,
    pub between: Vec<VehicleId>,
    pub upstream: Vec<VehicleId>,
}

/// Splits a lane's vehicles by position. The boundary x = x_c counts as
/// passed and x = x_w counts as between; without a pocket the whole
/// approach is "between".
pub fn partition(vehicles: &[VehicleState], corridor: &Corridor) -> LanePartition {
    let mut part = LanePartition::default();
    for v in vehicles {
        if v.x >= corridor.x_c {
            part.passed.push(v.id);
        } else if corridor.x_w.is_none_or(|xw| v.x >= xw) {
            part.between.push(v.id);
        } else {
            part.upstream.push(v.id);
        }
    }
    part
}

/// Inserts one virtual mirror per general-lane CAV into the bus-lane
/// ordering, at the position the CAV would occupy. Ties go to the real
/// vehicle. Returns the merged list, most downstream first.
pub fn sync_virtual(bus: &[VehicleState], general: &[VehicleState]) -> Vec<VehicleState> {
    let mut merged: Vec<VehicleState> = bus.to_vec();
    for g in general {
        if g.class != VehicleClass::Cav {
            continue;
        }
        let mut mirror = g.clone();
        mirror.lane = Lane::Bus;
        mirror.is_virtual = true;
        merged.push(mirror);
    }
    // Downstream first; real before virtual at equal positions.
    merged.sort_by(|a, b| {
        b.x.partial_cmp(&a.x)
            .unwrap()
            .then_with(|| a.is_virtual.cmp(&b.is_virtual))
            .then_with(|| a.id.cmp(&b.id))
    });
    debug_assert_eq!(
        merged.iter().filter(|v| v.is_virtual).count(),
        general.iter().filter(|v| v.class == VehicleClass::Cav).count(),
        "virtual/real bijection broken"
    );
    merged
}

/// Pocket-entrance passing estimate for an upstream bus-lane vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PocketEstimate {
    pub t_dep: f64,
    pub v_dep: f64,
}

/// One bus-lane row of the estimate table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BusEstimate {
    /// Stop-bar departure. None for right-turners, which exit at x_w.
    pub t_dep: Option<f64>,
    /// Pocket-entrance passing state, for vehicles upstream of x_w.
    pub pocket: Option<PocketEstimate>,
    /// True for an ungranted mirror (value inherited, never costed).
    pub is_virtual: bool,
}

/// Departure estimates for every vehicle at one step under one decision.
#[derive(Clone, Debug, Default)]
pub struct EstimateTable {
    pub k: f64,
    pub general: BTreeMap<VehicleId, f64>,
    pub bus: BTreeMap<VehicleId, BusEstimate>,
}

fn close_follow_headway(follower: VehicleClass, leader: VehicleClass) -> f64 {
    min_headway(newell_params(follower, leader), V_MAX)
}

/// Keeps real departure times strictly increasing toward upstream when max
/// operations produce an exact tie.
fn bump_above(t: f64, prev: f64) -> f64 {
    if t > prev || !prev.is_finite() {
        t
    } else {
        prev.next_up()
    }
}

/// Running chain state: the effective predecessor a follower keys off.
#[derive(Clone, Copy)]
struct ChainHead {
    t: f64,
    v: f64,
    class: VehicleClass,
}

impl ChainHead {
    fn from_record(r: &BoundaryRecord) -> ChainHead {
        ChainHead { t: r.t, v: r.v, class: r.class }
    }

    fn constraint(&self, follower: VehicleClass) -> f64 {
        if self.t.is_finite() {
            self.t + close_follow_headway(follower, self.class)
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Departure times for vehicles between the pocket entrance and the stop
/// bar (the whole approach when no pocket exists). `members` must be in
/// downstream-first order; ungranted mirrors inherit and are skipped by the
/// chain. Returns rows plus the chain tail for the upstream reorganization.
pub fn departure_busable(
    members: &[VehicleState],
    record: &BoundaryRecord,
    signal: &SignalPlan,
    corridor: &Corridor,
    k: f64,
    granted: &BTreeSet<VehicleId>,
) -> (Vec<(VehicleId, f64, bool)>, ChainTail) {
    let mut head = ChainHead::from_record(record);
    let mut rows = Vec::with_capacity(members.len());
    let mut last_real = f64::NEG_INFINITY;
    for m in members {
        let active = !m.is_virtual || granted.contains(&m.id);
        if !active {
            rows.push((m.id, head.t, true));
            continue;
        }
        debug_assert!(
            m.is_virtual || m.movement == Movement::Through,
            "right-turners cannot appear between x_w and the stop bar"
        );
        let t_p1 = k + min_travel_time(corridor.x_c - m.x, m.v, V_MAX, A_MAX);
        let t_p2 = t_p1.max(head.constraint(m.class));
        let t_p3 = t_p2.max(signal.cycle_red_end(t_p2));
        let t_dep = bump_above(t_p3, last_real);
        last_real = t_dep;
        head = ChainHead { t: t_dep, v: V_MAX, class: m.class };
        rows.push((m.id, t_dep, false));
    }
    (rows, ChainTail { head: if last_real.is_finite() { Some(head) } else { None } })
}

/// Last active member of the between-segment chain, handed to the upstream
/// through vehicles as their first stop-bar predecessor.
#[derive(Clone, Copy)]
pub struct ChainTail {
    head: Option<ChainHead>,
}

/// Pocket-entrance passing states for vehicles upstream of x_w. No signal
/// applies at x_w; followers are held only by their leader's passage.
pub fn pocket_crossing(
    members: &[VehicleState],
    record: &BoundaryRecord,
    corridor: &Corridor,
    k: f64,
    granted: &BTreeSet<VehicleId>,
) -> Vec<(VehicleId, PocketEstimate, bool)> {
    let x_w = corridor.x_w.expect("pocket crossing requires a pocket");
    let mut head = ChainHead::from_record(record);
    let mut rows = Vec::with_capacity(members.len());
    let mut last_real = f64::NEG_INFINITY;
    for m in members {
        let active = !m.is_virtual || granted.contains(&m.id);
        if !active {
            rows.push((m.id, PocketEstimate { t_dep: head.t, v_dep: head.v }, true));
            continue;
        }
        let tau_hat = close_follow_headway(m.class, head.class);
        let t_p1 = k + min_travel_time(x_w - m.x, m.v, V_MAX, A_MAX);
        let t_p2 = t_p1.max(head.constraint(m.class));
        let t_dep = bump_above(t_p2, last_real);
        let v_p1 = m.v + A_MAX * (t_dep - k);
        let v_p2 = if head.t.is_finite() { head.v + A_MAX * tau_hat } else { f64::INFINITY };
        let v_dep = V_MAX.min(v_p1).min(v_p2);
        last_real = t_dep;
        head = ChainHead { t: t_dep, v: v_dep, class: m.class };
        rows.push((m.id, PocketEstimate { t_dep, v_dep }, false));
    }
    rows
}

/// Stop-bar departures for upstream through vehicles, starting from their
/// pocket-entrance passing state. Right-turners are excised from the
/// following chain: each through vehicle keys off the nearest through
/// leader, or the between-segment tail, or the stop-bar record.
pub fn reorganize_through(
    members: &[VehicleState],
    pocket_rows: &[(VehicleId, PocketEstimate, bool)],
    tail: &ChainTail,
    record: &BoundaryRecord,
    signal: &SignalPlan,
    corridor: &Corridor,
    granted: &BTreeSet<VehicleId>,
) -> Vec<(VehicleId, f64, bool)> {
    let x_w = corridor.x_w.expect("reorganization requires a pocket");
    let mut head = match tail.head {
        Some(h) => h,
        None => ChainHead::from_record(record),
    };
    let mut rows = Vec::new();
    let mut last_real = f64::NEG_INFINITY;
    for (m, (row_id, pocket, _)) in members.iter().zip(pocket_rows) {
        debug_assert_eq!(m.id, *row_id);
        if m.movement != Movement::Through {
            continue;
        }
        let active = !m.is_virtual || granted.contains(&m.id);
        if !active {
            rows.push((m.id, head.t, true));
            continue;
        }
        let t_p1 = pocket.t_dep + min_travel_time(corridor.x_c - x_w, pocket.v_dep, V_MAX, A_MAX);
        let t_p2 = t_p1.max(head.constraint(m.class));
        let t_p3 = t_p2.max(signal.cycle_red_end(t_p2));
        let t_dep = bump_above(t_p3, last_real);
        last_real = t_dep;
        head = ChainHead { t: t_dep, v: V_MAX, class: m.class };
        rows.push((m.id, t_dep, false));
    }
    rows
}

/// Stop-bar departures for the general lane. HDVs held by the red phase
/// take the start-up loss (green reaction plus start-and-pass time); a
/// granted CAV's slot turns virtual, so its followers key off its
/// predecessor. The chain stops at the first right-turner: everything
/// behind it is outside the optimization scope.
pub fn departure_general(
    members: &[VehicleState],
    record: &BoundaryRecord,
    signal: &SignalPlan,
    corridor: &Corridor,
    k: f64,
    granted: &BTreeSet<VehicleId>,
) -> Vec<(VehicleId, f64)> {
    let mut head = ChainHead::from_record(record);
    let mut rows = Vec::new();
    let mut last_real = f64::NEG_INFINITY;
    for m in members {
        if m.movement == Movement::RightTurn {
            break;
        }
        if m.class == VehicleClass::Cav && granted.contains(&m.id) {
            // Vacated slot: followers inherit the predecessor.
            rows.push((m.id, head.t));
            continue;
        }
        let t_p1 = k + min_travel_time(corridor.x_c - m.x, m.v, V_MAX, A_MAX);
        let t_p2 = t_p1.max(head.constraint(m.class));
        let release = match m.class {
            VehicleClass::Hdv => signal.cycle_red_end(t_p2) + GREEN_REACTION + STARTUP_PASS,
            _ => signal.cycle_red_end(t_p2),
        };
        let t_dep = bump_above(t_p2.max(release), last_real);
        last_real = t_dep;
        head = ChainHead { t: t_dep, v: V_MAX, class: m.class };
        rows.push((m.id, t_dep));
    }
    rows
}

/// Full estimate for one step under one decision: virtual sync, partition,
/// both bus-lane legs and the general lane.
pub fn estimate(
    snapshot: &StepSnapshot,
    corridor: &Corridor,
    signal: &SignalPlan,
    granted: &BTreeSet<VehicleId>,
) -> EstimateTable {
    let merged = sync_virtual(&snapshot.bus, &snapshot.general);
    let part = partition(&merged, corridor);
    debug_assert!(part.passed.is_empty(), "crossed vehicles belong in the crossings registry");

    let split_at = |xw: f64| merged.iter().position(|v| v.x < xw).unwrap_or(merged.len());
    let (between_slice, upstream_slice) = match corridor.x_w {
        Some(xw) => merged.split_at(split_at(xw)),
        None => (&merged[..], &merged[..0]),
    };

    let mut table = EstimateTable { k: snapshot.k, ..Default::default() };

    let (between_rows, tail) = departure_busable(
        between_slice,
        &snapshot.records.bus_stop_bar,
        signal,
        corridor,
        snapshot.k,
        granted,
    );
    for (id, t_dep, is_virtual) in &between_rows {
        table.bus.insert(
            *id,
            BusEstimate { t_dep: Some(*t_dep), pocket: None, is_virtual: *is_virtual },
        );
    }

    if corridor.has_pocket() && !upstream_slice.is_empty() {
        let pocket_rows = pocket_crossing(
            upstream_slice,
            &snapshot.records.pocket_entrance,
            corridor,
            snapshot.k,
            granted,
        );
        for (m, (id, est, is_virtual)) in upstream_slice.iter().zip(&pocket_rows) {
            debug_assert_eq!(m.id, *id);
            table.bus.insert(
                *id,
                BusEstimate { t_dep: None, pocket: Some(*est), is_virtual: *is_virtual },
            );
        }
        let through_rows = reorganize_through(
            upstream_slice,
            &pocket_rows,
            &tail,
            &snapshot.records.bus_stop_bar,
            signal,
            corridor,
            granted,
        );
        for (id, t_dep, _) in &through_rows {
            if let Some(entry) = table.bus.get_mut(id) {
                entry.t_dep = Some(*t_dep);
            }
        }
    }

    for (id, t_dep) in departure_general(
        &snapshot.general,
        &snapshot.records.general_stop_bar,
        signal,
        corridor,
        snapshot.k,
        granted,
    ) {
        table.general.insert(id, t_dep);
    }

    table
}

/// Which extent members the objective sums over, with the priority weight.
#[derive(Clone, Debug, Default)]
pub struct CostScope {
    /// General-lane cars in scope (all through).
    pub general_cars: Vec<VehicleId>,
    /// Cars already in the bus lane, with their movement.
    pub bus_cars: Vec<(VehicleId, Movement)>,
    /// Buses in scope.
    pub buses: Vec<VehicleId>,
    pub omega_p: f64,
}

/// Weighted objective Z = omega_p * T_b + (1 - omega_p) * T_c for one
/// estimate table. Members that already crossed contribute their recorded
/// crossing time, so candidate costs stay comparable across steps.
pub fn weighted_cost(
    table: &EstimateTable,
    crossings: &BTreeMap<VehicleId, Crossing>,
    scope: &CostScope,
    granted: &BTreeSet<VehicleId>,
) -> f64 {
    let lookup_car = |id: VehicleId, movement: Movement, in_bus_lane: bool| -> f64 {
        if let Some(c) = crossings.get(&id) {
            return c.t;
        }
        if in_bus_lane || granted.contains(&id) {
            let row = table.bus.get(&id).unwrap_or_else(|| panic!("missing bus row for {id}"));
            return match movement {
                Movement::RightTurn => row.pocket.expect("right-turner without pocket row").t_dep,
                Movement::Through => row.t_dep.expect("through vehicle without stop-bar row"),
            };
        }
        *table.general.get(&id).unwrap_or_else(|| panic!("missing general row for {id}"))
    };

    let mut car_sum = 0.0;
    let mut n_cars = 0usize;
    for id in &scope.general_cars {
        car_sum += lookup_car(*id, Movement::Through, false);
        n_cars += 1;
    }
    for (id, movement) in &scope.bus_cars {
        car_sum += lookup_car(*id, *movement, true);
        n_cars += 1;
    }
    let t_c = if n_cars > 0 { car_sum / n_cars as f64 } else { 0.0 };

    let mut bus_sum = 0.0;
    for id in &scope.buses {
        bus_sum += match crossings.get(id) {
            Some(c) => c.t,
            None => table
                .bus
                .get(id)
                .and_then(|row| row.t_dep)
                .unwrap_or_else(|| panic!("missing bus row for {id}")),
        };
    }
    let t_b = if scope.buses.is_empty() { 0.0 } else { bus_sum / scope.buses.len() as f64 };

    scope.omega_p * t_b + (1.0 - scope.omega_p) * t_c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Movement::*, VehicleClass::*};

    fn corridor_a() -> Corridor {
        Corridor::new(400.0, 30.0, 150.0, None, 2).unwrap()
    }

    fn corridor_b() -> Corridor {
        Corridor::new(400.0, 30.0, 150.0, Some(130.0), 2).unwrap()
    }

    fn signal() -> SignalPlan {
        SignalPlan::new(60.0, 30.0).unwrap()
    }

    fn veh(id: u64, class: VehicleClass, movement: Movement, lane: Lane, x: f64, v: f64) -> VehicleState {
        VehicleState::new(VehicleId(id), class, movement, lane, x, v)
    }

    fn snapshot(k: f64, bus: Vec<VehicleState>, general: Vec<VehicleState>) -> StepSnapshot {
        StepSnapshot { k, bus, general, records: BoundaryRecords::default(), crossings: BTreeMap::new() }
    }

    #[test]
    fn partition_boundaries() {
        let c = corridor_b();
        let vehicles = vec![
            veh(0, Cav, Through, Lane::Bus, 400.0, 14.0), // exactly at x_c: passed
            veh(1, Cav, Through, Lane::Bus, 300.0, 14.0),
            veh(2, Cav, Through, Lane::Bus, 270.0, 14.0), // exactly at x_w: between
            veh(3, Cab, Through, Lane::Bus, 100.0, 14.0),
        ];
        let p = partition(&vehicles, &c);
        assert_eq!(p.passed, vec![VehicleId(0)]);
        assert_eq!(p.between, vec![VehicleId(1), VehicleId(2)]);
        assert_eq!(p.upstream, vec![VehicleId(3)]);
    }

    #[test]
    fn partition_no_pocket_has_empty_upstream() {
        let c = corridor_a();
        let vehicles = vec![veh(0, Cab, Through, Lane::Bus, 10.0, 5.0)];
        let p = partition(&vehicles, &c);
        assert!(p.upstream.is_empty());
        assert_eq!(p.between, vec![VehicleId(0)]);
    }

    #[test]
    fn sync_virtual_empty_general_keeps_bus_lane() {
        let bus = vec![veh(0, Cab, Through, Lane::Bus, 100.0, 10.0)];
        let merged = sync_virtual(&bus, &[]);
        assert_eq!(merged.len(), 1);
        assert!(!merged[0].is_virtual);
    }

    #[test]
    fn sync_virtual_mirrors_every_cav() {
        let bus = vec![veh(0, Cab, Through, Lane::Bus, 200.0, 10.0)];
        let general = vec![
            veh(1, Cav, Through, Lane::General, 250.0, 12.0),
            veh(2, Hdv, Through, Lane::General, 150.0, 12.0),
            veh(3, Cav, Through, Lane::General, 100.0, 12.0),
        ];
        let merged = sync_virtual(&bus, &general);
        let virtuals: Vec<_> = merged.iter().filter(|v| v.is_virtual).map(|v| v.id).collect();
        assert_eq!(virtuals, vec![VehicleId(1), VehicleId(3)]);
        // Ordering is downstream-first.
        let xs: Vec<f64> = merged.iter().map(|v| v.x).collect();
        assert_eq!(xs, vec![250.0, 200.0, 100.0]);
    }

    #[test]
    fn lone_bus_cruises_through_green() {
        // Lone real CAB at x=380, v=14: crossing in 20/14 s, inside green.
        let c = corridor_a();
        let mut snap = snapshot(30.0, vec![veh(0, Cab, Through, Lane::Bus, 380.0, 14.0)], vec![]);
        snap.records = BoundaryRecords::default();
        let table = estimate(&snap, &c, &signal(), &BTreeSet::new());
        let t = table.bus[&VehicleId(0)].t_dep.unwrap();
        assert!((t - (30.0 + 20.0 / 14.0)).abs() < 1e-9, "{t}");
    }

    #[test]
    fn red_gates_departure() {
        // Unconstrained arrival at 75 lands in red; release is 90.
        let c = corridor_a();
        // x chosen so k + Z = 75: Z = 45 from v=14 cruise: dist = 630 > corridor.
        // Use v = 14, dist = 400 - x, k = 75 - dist/14 instead.
        let x = 300.0;
        let k = 75.0 - (400.0 - x) / 14.0;
        let snap = snapshot(k, vec![veh(0, Cav, Through, Lane::Bus, x, 14.0)], vec![]);
        let table = estimate(&snap, &c, &signal(), &BTreeSet::new());
        let t = table.bus[&VehicleId(0)].t_dep.unwrap();
        assert!((t - 90.0).abs() < 1e-9, "{t}");
    }

    #[test]
    fn ungranted_mirror_inherits_predecessor() {
        let c = corridor_a();
        let bus = vec![veh(0, Cab, Through, Lane::Bus, 300.0, 14.0)];
        let general = vec![veh(1, Cav, Through, Lane::General, 200.0, 14.0)];
        let table = estimate(&snapshot(0.0, bus, general), &c, &signal(), &BTreeSet::new());
        let bus_row = table.bus[&VehicleId(1)];
        assert!(bus_row.is_virtual);
        let leader = table.bus[&VehicleId(0)].t_dep.unwrap();
        assert_eq!(bus_row.t_dep, Some(leader));
    }

    #[test]
    fn mirror_of_first_cav_in_empty_lane_reads_boundary_record() {
        let c = corridor_a();
        let general = vec![veh(1, Cav, Through, Lane::General, 100.0, 14.0)];
        let mut snap = snapshot(40.0, vec![], general);
        snap.records.bus_stop_bar = BoundaryRecord { t: 33.0, v: 14.0, class: Cab };
        let table = estimate(&snap, &c, &signal(), &BTreeSet::new());
        assert_eq!(table.bus[&VehicleId(1)].t_dep, Some(33.0));
    }

    #[test]
    fn granted_mirror_turns_real_and_slot_inherits() {
        let c = corridor_a();
        let bus = vec![veh(0, Cab, Through, Lane::Bus, 350.0, 14.0)];
        let general = vec![
            veh(1, Cav, Through, Lane::General, 300.0, 14.0),
            veh(2, Hdv, Through, Lane::General, 250.0, 14.0),
        ];
        let granted: BTreeSet<_> = [VehicleId(1)].into();
        let snap = snapshot(30.0, bus, general);
        let table = estimate(&snap, &c, &signal(), &granted);

        // Mirror is real: follows the CAB with the auto headway at v_max.
        let cab = table.bus[&VehicleId(0)].t_dep.unwrap();
        let mirror = table.bus[&VehicleId(1)];
        assert!(!mirror.is_virtual);
        let t_p1 = 30.0 + min_travel_time(100.0, 14.0, V_MAX, A_MAX);
        let expect = t_p1.max(cab + 1.0 + 9.5 / 14.0);
        assert!((mirror.t_dep.unwrap() - expect).abs() < 1e-9);

        // The general-lane slot inherits the (empty-lane) record; the HDV
        // follower is now keyed off that same head.
        let slot = table.general[&VehicleId(1)];
        assert!(slot.is_infinite() && slot < 0.0);
        let hdv = table.general[&VehicleId(2)];
        let hdv_free = 30.0 + min_travel_time(150.0, 14.0, V_MAX, A_MAX);
        assert!((hdv - hdv_free).abs() < 1e-9, "follower should be unconstrained");
    }

    #[test]
    fn hdv_startup_loss_in_red() {
        // HDV whose unconstrained arrival falls in red: released at
        // green start + 0.4 + 1.5.
        let c = corridor_a();
        let x = 300.0;
        let k = 60.0; // red starts at 60; arrival 60 + 100/14 ~ 67.1 in red
        let general = vec![veh(0, Hdv, Through, Lane::General, x, 14.0)];
        let table = estimate(&snapshot(k, vec![], general), &c, &signal(), &BTreeSet::new());
        let t = table.general[&VehicleId(0)];
        assert!((t - 91.9).abs() < 1e-9, "{t}");
    }

    #[test]
    fn cav_has_no_startup_loss() {
        let c = corridor_a();
        let general = vec![veh(0, Cav, Through, Lane::General, 300.0, 14.0)];
        let table = estimate(&snapshot(60.0, vec![], general), &c, &signal(), &BTreeSet::new());
        let t = table.general[&VehicleId(0)];
        assert!((t - 90.0).abs() < 1e-9, "{t}");
    }

    #[test]
    fn pocket_first_vehicle_from_rest() {
        let c = corridor_b();
        let bus = vec![veh(0, Cav, RightTurn, Lane::Bus, 0.0, 0.0)];
        let table = estimate(&snapshot(0.0, bus, vec![]), &c, &signal(), &BTreeSet::new());
        let row = table.bus[&VehicleId(0)].pocket.unwrap();
        assert!((row.t_dep - (7.0 + 221.0 / 14.0)).abs() < 1e-9, "{}", row.t_dep);
        assert!((row.v_dep - 14.0).abs() < 1e-9);
        assert!(table.bus[&VehicleId(0)].t_dep.is_none(), "right-turners have no stop-bar row");
    }

    #[test]
    fn pocket_follower_pinned_by_leader() {
        let c = corridor_b();
        let bus = vec![
            veh(0, Hdv, RightTurn, Lane::Bus, 260.0, 3.0),
            veh(1, Cav, Through, Lane::Bus, 252.0, 3.0),
        ];
        let table = estimate(&snapshot(0.0, bus, vec![]), &c, &signal(), &BTreeSet::new());
        let leader = table.bus[&VehicleId(0)].pocket.unwrap();
        let follower = table.bus[&VehicleId(1)].pocket.unwrap();
        let tau_hat = 1.0 + 5.5 / 14.0; // CAV behind HDV (car length)
        assert!((follower.t_dep - (leader.t_dep + tau_hat)).abs() < 1e-9);
        assert!(follower.v_dep <= leader.v_dep + A_MAX * tau_hat + 1e-9);
    }

    #[test]
    fn through_vehicle_skips_right_turning_leader() {
        // i5 (through) behind right-turner i4 behind through i3: once i4
        // exits at the pocket, i5 keys off i3.
        let c = corridor_b();
        let bus = vec![
            veh(3, Cav, Through, Lane::Bus, 200.0, 14.0),
            veh(4, Hdv, RightTurn, Lane::Bus, 150.0, 14.0),
            veh(5, Cav, Through, Lane::Bus, 100.0, 14.0),
        ];
        let table = estimate(&snapshot(30.0, bus, vec![]), &c, &signal(), &BTreeSet::new());
        let t3 = table.bus[&VehicleId(3)].t_dep.unwrap();
        let t5 = table.bus[&VehicleId(5)].t_dep.unwrap();
        let p5 = table.bus[&VehicleId(5)].pocket.unwrap();
        let t_p1 = p5.t_dep + min_travel_time(130.0, p5.v_dep, V_MAX, A_MAX);
        let expect = t_p1.max(t3 + 1.0 + 5.5 / 14.0);
        assert!((t5 - expect).abs() < 1e-9, "{t5} vs {expect}");
    }

    #[test]
    fn sole_through_unconstrained_after_right_turner_exits() {
        let c = corridor_b();
        let bus = vec![
            veh(0, Hdv, RightTurn, Lane::Bus, 200.0, 14.0),
            veh(1, Cav, Through, Lane::Bus, 150.0, 14.0),
        ];
        let table = estimate(&snapshot(30.0, bus, vec![]), &c, &signal(), &BTreeSet::new());
        let p1 = table.bus[&VehicleId(1)].pocket.unwrap();
        let t1 = table.bus[&VehicleId(1)].t_dep.unwrap();
        let free = p1.t_dep + min_travel_time(130.0, p1.v_dep, V_MAX, A_MAX);
        let gated = free.max(signal().cycle_red_end(free));
        assert!((t1 - gated).abs() < 1e-9);
    }

    #[test]
    fn weighted_cost_endpoints() {
        let c = corridor_a();
        let bus = vec![veh(0, Cab, Through, Lane::Bus, 380.0, 14.0)];
        let general = vec![veh(1, Cav, Through, Lane::General, 300.0, 14.0)];
        let snap = snapshot(30.0, bus, general);
        let table = estimate(&snap, &c, &signal(), &BTreeSet::new());

        let mut scope = CostScope {
            general_cars: vec![VehicleId(1)],
            bus_cars: vec![],
            buses: vec![VehicleId(0)],
            omega_p: 1.0,
        };
        let z_bus_only = weighted_cost(&table, &snap.crossings, &scope, &BTreeSet::new());
        let t_bus = table.bus[&VehicleId(0)].t_dep.unwrap();
        assert!((z_bus_only - t_bus).abs() < 1e-12);

        scope.omega_p = 0.0;
        let z_cars_only = weighted_cost(&table, &snap.crossings, &scope, &BTreeSet::new());
        let t_car = table.general[&VehicleId(1)];
        assert!((z_cars_only - t_car).abs() < 1e-12);
    }

    #[test]
    fn granted_cav_costed_from_bus_row() {
        let c = corridor_a();
        let general = vec![veh(1, Cav, Through, Lane::General, 300.0, 14.0)];
        let snap = snapshot(30.0, vec![], general);
        let granted: BTreeSet<_> = [VehicleId(1)].into();
        let table = estimate(&snap, &c, &signal(), &granted);
        let scope = CostScope {
            general_cars: vec![VehicleId(1)],
            bus_cars: vec![],
            buses: vec![],
            omega_p: 0.9,
        };
        let z = weighted_cost(&table, &snap.crossings, &scope, &granted);
        let expect = 0.1 * table.bus[&VehicleId(1)].t_dep.unwrap();
        assert!((z - expect).abs() < 1e-12);
    }

    #[test]
    fn virtual_neutrality() {
        // With no grants, adding general-lane CAVs (hence mirrors) must not
        // move any real bus-lane estimate.
        let c = corridor_b();
        let bus = vec![
            veh(0, Cab, Through, Lane::Bus, 300.0, 12.0),
            veh(1, Cav, Through, Lane::Bus, 230.0, 12.0),
            veh(2, Hdv, RightTurn, Lane::Bus, 120.0, 10.0),
        ];
        let general = vec![
            veh(10, Cav, Through, Lane::General, 350.0, 13.0),
            veh(11, Cav, Through, Lane::General, 180.0, 9.0),
            veh(12, Cav, Through, Lane::General, 60.0, 7.0),
        ];
        let with = estimate(&snapshot(5.0, bus.clone(), general), &c, &signal(), &BTreeSet::new());
        let without = estimate(&snapshot(5.0, bus, vec![]), &c, &signal(), &BTreeSet::new());
        for id in [0u64, 1, 2] {
            assert_eq!(with.bus[&VehicleId(id)], without.bus[&VehicleId(id)], "vehicle {id}");
        }
    }
}
