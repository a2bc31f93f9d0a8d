//! Right-of-way allocation: extent definition, lane-change opportunity
//! pre-allocation, and exact search over the (step, grant-set) lattice.
//!
//! Instances left after pre-allocation are tiny, so instead of
//! materializing big-M rows the solver evaluates the floor-of-cycle and
//! acceleration-branch indicators exactly inside each candidate's estimate
//! and prunes with a monotone lower bound. An exhaustive enumeration twin
//! is kept alongside for validation.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::domain::{
    Corridor, Grant, Lane, Movement, RowPlan, SignalPlan, VehicleClass, VehicleId, VehicleState,
    A_MAX, CAR_LEN, D_SAFE, V_MAX,
};
use crate::estimator::{estimate, weighted_cost, CostScope, HorizonStates, StepSnapshot};
use crate::kinematics::{min_headway, min_travel_time, newell_params};

/// Vehicles the optimizer may touch, fixed at the window start. `t1` is the
/// earliest stop-bar arrival of a dwelling bus (infinite when none dwells).
#[derive(Clone, Debug)]
pub struct Extent {
    /// General-lane vehicles in scope, most downstream first.
    pub general: Vec<VehicleId>,
    /// Bus-lane vehicles in scope, most downstream first.
    pub bus: Vec<VehicleId>,
    pub t1: f64,
    members: BTreeMap<VehicleId, (VehicleClass, Movement)>,
}

impl Extent {
    pub fn is_degenerate(&self) -> bool {
        self.general.is_empty() && self.bus.is_empty()
    }

    /// General-lane CAVs that may receive a recommendation.
    pub fn eligible_cavs(&self) -> Vec<VehicleId> {
        self.general
            .iter()
            .copied()
            .filter(|id| self.members[id].0 == VehicleClass::Cav)
            .collect()
    }

    pub fn cost_scope(&self, omega_p: f64) -> CostScope {
        let mut scope = CostScope { omega_p, ..Default::default() };
        for id in &self.general {
            scope.general_cars.push(*id);
        }
        for id in &self.bus {
            let (class, movement) = self.members[id];
            if class == VehicleClass::Cab {
                scope.buses.push(*id);
            } else {
                scope.bus_cars.push((*id, movement));
            }
        }
        scope
    }
}

/// Extent definition. Seeds the general-lane set downstream of the nearest
/// right-turner and the bus-lane set with everything, then shrinks both
/// around dwelling or approaching buses, and finally drops cars whose
/// crossing would delay a dwelling bus assumed to depart now.
pub fn define_extent(snap: &StepSnapshot, corridor: &Corridor) -> Extent {
    let k0 = snap.k;
    let x_r = snap
        .general
        .iter()
        .filter(|v| v.movement == Movement::RightTurn)
        .map(|v| v.x)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut j_gl: Vec<&VehicleState> = snap.general.iter().filter(|v| v.x > x_r).collect();
    let mut j_bl: Vec<&VehicleState> = snap.bus.iter().collect();

    let dwelling = snap
        .bus
        .iter()
        .any(|v| v.class == VehicleClass::Cab && v.dwell.is_some_and(|d| d.remaining_s > 0.0));

    let t1 = if dwelling {
        let x_s = corridor.x_s;
        j_gl.retain(|v| v.x >= x_s);
        j_bl.retain(|v| v.x >= x_s.max(x_r));
        k0 + min_travel_time(corridor.x_c - x_s, 0.0, V_MAX, A_MAX)
    } else {
        if let Some(bus_j) = snap
            .bus
            .iter()
            .filter(|v| v.class == VehicleClass::Cab && v.x <= corridor.x_s)
            .max_by(|a, b| a.x.partial_cmp(&b.x).unwrap())
        {
            j_bl.retain(|v| v.x >= bus_j.x);
            j_gl.retain(|v| v.x >= bus_j.x.max(x_r));
        }
        f64::INFINITY
    };

    if t1.is_finite() {
        let tau_b = min_headway(newell_params(VehicleClass::Cab, VehicleClass::Cav), V_MAX);
        j_gl.retain(|v| k0 + min_travel_time(corridor.x_c - v.x, v.v, V_MAX, A_MAX) + tau_b <= t1);
    }

    let mut members = BTreeMap::new();
    for v in j_gl.iter().chain(j_bl.iter()) {
        members.insert(v.id, (v.class, v.movement));
    }
    Extent {
        general: j_gl.iter().map(|v| v.id).collect(),
        bus: j_bl.iter().map(|v| v.id).collect(),
        t1,
        members,
    }
}

/// An insertion slot: the bus-lane gap a CAV would drop into, plus the
/// CAV's own predicted position at the step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EligibleSlot {
    pub x: f64,
    pub x_follow: f64,
    pub x_lead: f64,
    pub leader: Option<VehicleId>,
    pub follower: Option<VehicleId>,
}

/// Lane-change opportunities at one retained step.
#[derive(Clone, Debug)]
pub struct StepMask {
    /// Index into the horizon's step snapshots.
    pub step_index: usize,
    pub k: f64,
    pub eligible: BTreeMap<VehicleId, EligibleSlot>,
}

/// Opportunity indicator over the reduced step set K': steps whose
/// eligible set repeats the previous step are dropped.
#[derive(Clone, Debug)]
pub struct OpportunityMask {
    pub steps: Vec<StepMask>,
}

#[derive(Clone, Copy, Debug)]
struct BusGap {
    x_follow: f64,
    x_lead: f64,
    leader: Option<VehicleId>,
    follower: Option<VehicleId>,
}

/// Gaps between consecutive real bus-lane vehicles wide enough to take a
/// car: leader bound is the leader's rear bumper (the stop bar for the
/// first vehicle), and the last vehicle also opens the entry gap.
fn bus_lane_gaps(bus: &[VehicleState], corridor: &Corridor) -> Vec<BusGap> {
    let min_gap = 2.0 * D_SAFE + CAR_LEN;
    let mut gaps = Vec::new();
    if bus.is_empty() {
        gaps.push(BusGap { x_follow: 0.0, x_lead: corridor.x_c, leader: None, follower: None });
        return gaps;
    }
    for (i, v) in bus.iter().enumerate() {
        let (x_lead, leader) = if i == 0 {
            (corridor.x_c, None)
        } else {
            (bus[i - 1].rear(), Some(bus[i - 1].id))
        };
        if x_lead - v.x > min_gap {
            gaps.push(BusGap { x_follow: v.x, x_lead, leader, follower: Some(v.id) });
        }
    }
    let last = bus.last().unwrap();
    if last.rear() - 0.0 > min_gap {
        gaps.push(BusGap {
            x_follow: 0.0,
            x_lead: last.rear(),
            leader: Some(last.id),
            follower: None,
        });
    }
    gaps
}

/// Post-change ordering check: at k + k_lc the CAV must still sit strictly
/// between the gap's bounding vehicles (a bound that has crossed out of the
/// corridor no longer constrains).
fn ordering_holds(
    horizon: &HorizonStates,
    future_index: usize,
    cav: VehicleId,
    gap: &BusGap,
) -> bool {
    let Some((x_cav, _, lane)) = horizon.state_at(future_index, cav) else {
        return false;
    };
    if lane != Lane::General {
        return false;
    }
    if let Some(leader) = gap.leader {
        if let Some((x_lead, _, _)) = horizon.state_at(future_index, leader) {
            if x_cav >= x_lead {
                return false;
            }
        }
    }
    if let Some(follower) = gap.follower {
        if let Some((x_fol, _, _)) = horizon.state_at(future_index, follower) {
            if x_cav <= x_fol {
                return false;
            }
        }
    }
    true
}

/// ROW pre-allocation heuristic: per step, mark each extent CAV that is
/// below the no-changing zone, moving, and strictly inside a qualifying
/// gap with safety margins, then drop steps whose qualifying set repeats.
pub fn preallocate(
    horizon: &HorizonStates,
    extent: &Extent,
    corridor: &Corridor,
    k_lc_steps: usize,
) -> OpportunityMask {
    let cavs = extent.eligible_cavs();
    let mut steps = Vec::new();
    let mut prev_ids: Option<BTreeSet<VehicleId>> = None;
    for (idx, k) in horizon.window.steps().into_iter().enumerate() {
        let snap = horizon.step(idx);
        let gaps = bus_lane_gaps(&snap.bus, corridor);
        let mut eligible = BTreeMap::new();
        for id in &cavs {
            let Some(g) = snap.general.iter().find(|v| v.id == *id) else {
                continue; // already crossed within the prediction
            };
            if g.x >= corridor.x_n || g.v <= 0.0 {
                continue;
            }
            let slot = gaps.iter().find_map(|gap| {
                let fits = gap.x_follow + D_SAFE + CAR_LEN < g.x && g.x < gap.x_lead - D_SAFE;
                (fits && ordering_holds(horizon, idx + k_lc_steps, *id, gap)).then_some(
                    EligibleSlot {
                        x: g.x,
                        x_follow: gap.x_follow,
                        x_lead: gap.x_lead,
                        leader: gap.leader,
                        follower: gap.follower,
                    },
                )
            });
            if let Some(slot) = slot {
                eligible.insert(*id, slot);
            }
        }
        let ids: BTreeSet<VehicleId> = eligible.keys().copied().collect();
        let duplicate = idx > 0 && prev_ids.as_ref() == Some(&ids);
        prev_ids = Some(ids);
        if duplicate {
            continue;
        }
        steps.push(StepMask { step_index: idx, k, eligible });
    }
    OpportunityMask { steps }
}

/// One point of the decision lattice: the recommendation step and the set
/// of CAVs granted at it.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateDecision {
    pub step_index: usize,
    pub k: f64,
    pub granted: BTreeSet<VehicleId>,
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("candidate lattice has {count} points, above the cap of {cap}; shorten the horizon")]
    TooManyCandidates { count: u128, cap: u128 },
}

/// Default cap on the candidate lattice size.
pub const CANDIDATE_CAP: u128 = 1 << 16;

/// Two grants aimed at the same gap must leave lane-change spacing between
/// each other as well as against the gap bounds.
fn pairwise_compatible(a: &EligibleSlot, b: &EligibleSlot) -> bool {
    let same_gap = a.x_follow == b.x_follow && a.x_lead == b.x_lead;
    if !same_gap {
        return true;
    }
    (a.x - b.x).abs() > CAR_LEN + D_SAFE
}

fn subset_compatible(mask: &StepMask, ids: &BTreeSet<VehicleId>) -> bool {
    let slots: Vec<&EligibleSlot> = ids.iter().map(|id| &mask.eligible[id]).collect();
    for i in 0..slots.len() {
        for j in (i + 1)..slots.len() {
            if !pairwise_compatible(slots[i], slots[j]) {
                return false;
            }
        }
    }
    true
}

fn lattice_size(mask: &OpportunityMask) -> u128 {
    mask.steps.iter().map(|s| 1u128 << s.eligible.len().min(100)).sum()
}

/// All candidate decisions: for every retained step, every mutually
/// compatible subset of its eligible CAVs, including the empty decision.
pub fn enumerate_candidates(
    mask: &OpportunityMask,
    cap: u128,
) -> Result<Vec<CandidateDecision>, OptimizeError> {
    let count = lattice_size(mask);
    if count > cap {
        return Err(OptimizeError::TooManyCandidates { count, cap });
    }
    let mut out = Vec::new();
    for step in &mask.steps {
        let ids: Vec<VehicleId> = step.eligible.keys().copied().collect();
        let n = ids.len();
        for bits in 0..(1u64 << n) {
            let granted: BTreeSet<VehicleId> = ids
                .iter()
                .enumerate()
                .filter(|(i, _)| bits & (1 << i) != 0)
                .map(|(_, id)| *id)
                .collect();
            if subset_compatible(step, &granted) {
                out.push(CandidateDecision { step_index: step.step_index, k: step.k, granted });
            }
        }
    }
    Ok(out)
}

/// Everything a solve needs besides the mask.
pub struct RowProblem<'a> {
    pub horizon: &'a HorizonStates,
    pub extent: &'a Extent,
    pub corridor: &'a Corridor,
    pub signal: &'a SignalPlan,
    pub omega_p: f64,
    pub candidate_cap: u128,
}

impl RowProblem<'_> {
    fn evaluate(&self, scope: &CostScope, cand: &CandidateDecision) -> f64 {
        let snap = self.horizon.step(cand.step_index);
        let table = estimate(snap, self.corridor, self.signal, &cand.granted);
        weighted_cost(&table, &snap.crossings, scope, &cand.granted)
    }

    /// Per-vehicle floor used in the branch-and-bound bound: the vehicle's
    /// unconstrained, signal-gated arrival. Valid whichever lane the
    /// vehicle ends up in, since a lane change keeps its position.
    fn unconstrained_floor(&self, snap: &StepSnapshot, id: VehicleId) -> f64 {
        if let Some(c) = snap.crossings.get(&id) {
            return c.t;
        }
        let v = snap
            .general
            .iter()
            .find(|v| v.id == id)
            .expect("floor queried for a vehicle outside the general lane");
        let t_p1 = snap.k + min_travel_time(self.corridor.x_c - v.x, v.v, V_MAX, A_MAX);
        let release = match v.class {
            VehicleClass::Hdv => {
                self.signal.cycle_red_end(t_p1)
                    + crate::domain::GREEN_REACTION
                    + crate::domain::STARTUP_PASS
            }
            _ => self.signal.cycle_red_end(t_p1),
        };
        t_p1.max(release)
    }

    /// Lower bound on any completion of a partial decision: bus-lane rows
    /// are evaluated with only the fixed grants (further insertions only
    /// delay them), while general-lane cars not yet granted drop to their
    /// unconstrained floor (removals only speed them up).
    fn lower_bound(
        &self,
        scope: &CostScope,
        step_index: usize,
        fixed: &BTreeSet<VehicleId>,
    ) -> f64 {
        let snap = self.horizon.step(step_index);
        let table = estimate(snap, self.corridor, self.signal, fixed);

        let mut car_sum = 0.0;
        let mut n_cars = 0usize;
        for id in &scope.general_cars {
            n_cars += 1;
            if fixed.contains(id) {
                car_sum += table.bus[id].t_dep.expect("granted row missing");
            } else {
                car_sum += self.unconstrained_floor(snap, *id);
            }
        }
        for (id, movement) in &scope.bus_cars {
            n_cars += 1;
            car_sum += match snap.crossings.get(id) {
                Some(c) => c.t,
                None => match movement {
                    Movement::RightTurn => table.bus[id].pocket.expect("pocket row").t_dep,
                    Movement::Through => table.bus[id].t_dep.expect("bus-lane row"),
                },
            };
        }
        let t_c = if n_cars > 0 { car_sum / n_cars as f64 } else { 0.0 };

        let mut bus_sum = 0.0;
        for id in &scope.buses {
            bus_sum += match snap.crossings.get(id) {
                Some(c) => c.t,
                None => table.bus[id].t_dep.expect("bus row"),
            };
        }
        let t_b = if scope.buses.is_empty() { 0.0 } else { bus_sum / scope.buses.len() as f64 };

        self.omega_p * t_b + (1.0 - self.omega_p) * t_c
    }
}

/// Deterministic preference order between scored candidates: lower cost,
/// then fewer grants, then the earlier step, then the lexicographically
/// smallest grant set.
fn strictly_better(za: f64, a: &CandidateDecision, zb: f64, b: &CandidateDecision) -> bool {
    if za != zb {
        return za < zb;
    }
    if a.granted.len() != b.granted.len() {
        return a.granted.len() < b.granted.len();
    }
    if a.step_index != b.step_index {
        return a.step_index < b.step_index;
    }
    a.granted.iter().lt(b.granted.iter())
}

fn build_plan(problem: &RowProblem<'_>, best: CandidateDecision, objective: f64) -> RowPlan {
    if best.granted.is_empty() {
        return RowPlan::empty(best.k, objective);
    }
    // Intended neighbours at the change step: bus-lane real vehicles plus
    // co-granted CAVs at their predicted positions.
    let snap = problem.horizon.step(best.step_index);
    let mut occupants: Vec<(f64, VehicleId)> = snap.bus.iter().map(|v| (v.x, v.id)).collect();
    for id in &best.granted {
        if let Some(g) = snap.general.iter().find(|v| v.id == *id) {
            occupants.push((g.x, *id));
        }
    }
    occupants.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    let grants = best
        .granted
        .iter()
        .map(|id| {
            let pos = occupants.iter().position(|(_, v)| v == id).unwrap();
            Grant {
                vehicle: *id,
                predecessor: pos.checked_sub(1).map(|p| occupants[p].1),
                follower: occupants.get(pos + 1).map(|(_, v)| *v),
            }
        })
        .collect();
    RowPlan { k_c: best.k, grants, objective }
}

/// Exhaustive oracle: scores every candidate and picks the best under the
/// deterministic preference order.
pub fn solve_exhaustive(
    problem: &RowProblem<'_>,
    mask: &OpportunityMask,
) -> Result<RowPlan, OptimizeError> {
    let scope = problem.extent.cost_scope(problem.omega_p);
    let mut best: Option<(f64, CandidateDecision)> = None;
    for cand in enumerate_candidates(mask, problem.candidate_cap)? {
        let z = problem.evaluate(&scope, &cand);
        let better = match &best {
            None => true,
            Some((bz, bc)) => strictly_better(z, &cand, *bz, bc),
        };
        if better {
            best = Some((z, cand));
        }
    }
    let (z, cand) = best.expect("mask always retains the window start");
    Ok(build_plan(problem, cand, z))
}

/// Branch-and-bound over the candidate lattice. Exact: prunes only
/// subtrees whose lower bound already exceeds the incumbent cost, so the
/// result matches `solve_exhaustive` including tie-breaks.
pub fn solve(problem: &RowProblem<'_>, mask: &OpportunityMask) -> Result<RowPlan, OptimizeError> {
    let count = lattice_size(mask);
    if count > problem.candidate_cap {
        return Err(OptimizeError::TooManyCandidates { count, cap: problem.candidate_cap });
    }
    let scope = problem.extent.cost_scope(problem.omega_p);
    let mut best: Option<(f64, CandidateDecision)> = None;

    for step in &mask.steps {
        let ids: Vec<VehicleId> = step.eligible.keys().copied().collect();
        let mut chosen: BTreeSet<VehicleId> = BTreeSet::new();
        descend(problem, &scope, step, &ids, 0, &mut chosen, &mut best);
    }

    let (z, cand) = best.expect("mask always retains the window start");
    Ok(build_plan(problem, cand, z))
}

fn descend(
    problem: &RowProblem<'_>,
    scope: &CostScope,
    step: &StepMask,
    ids: &[VehicleId],
    depth: usize,
    chosen: &mut BTreeSet<VehicleId>,
    best: &mut Option<(f64, CandidateDecision)>,
) {
    // Bound check against the incumbent; small slack absorbs float noise
    // in the two-leg travel-time composition.
    if let Some((bz, _)) = best {
        let lb = problem.lower_bound(scope, step.step_index, chosen);
        if lb > *bz + 1e-9 {
            return;
        }
    }
    if depth == ids.len() {
        let cand =
            CandidateDecision { step_index: step.step_index, k: step.k, granted: chosen.clone() };
        let z = problem.evaluate(scope, &cand);
        let better = match best {
            None => true,
            Some((bz, bc)) => strictly_better(z, &cand, *bz, bc),
        };
        if better {
            *best = Some((z, cand));
        }
        return;
    }
    let id = ids[depth];
    // Exclude first so the empty decision seeds the incumbent early.
    descend(problem, scope, step, ids, depth + 1, chosen, best);
    let compatible =
        chosen.iter().all(|c| pairwise_compatible(&step.eligible[c], &step.eligible[&id]));
    if compatible {
        chosen.insert(id);
        descend(problem, scope, step, ids, depth + 1, chosen, best);
        chosen.remove(&id);
    }
}

/// Audit dump: one CSV line per candidate with its step, grant set and
/// cost.
pub fn audit_csv(
    problem: &RowProblem<'_>,
    mask: &OpportunityMask,
) -> Result<String, OptimizeError> {
    let scope = problem.extent.cost_scope(problem.omega_p);
    let mut out = String::from("k,grants,cost\n");
    for cand in enumerate_candidates(mask, problem.candidate_cap)? {
        let z = problem.evaluate(&scope, &cand);
        let grants = cand
            .granted
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!("{:.6},{},{:.6}\n", cand.k, grants, z));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DwellState, Movement::*, PlanningWindow, VehicleClass::*};
    use crate::estimator::{BoundaryRecords, CrossedBoundary, Crossing};

    fn corridor_a() -> Corridor {
        Corridor::new(400.0, 30.0, 150.0, None, 2).unwrap()
    }

    fn corridor_b() -> Corridor {
        Corridor::new(400.0, 30.0, 150.0, Some(130.0), 2).unwrap()
    }

    fn signal() -> SignalPlan {
        SignalPlan::new(60.0, 30.0).unwrap()
    }

    fn veh(
        id: u64,
        class: VehicleClass,
        movement: Movement,
        lane: Lane,
        x: f64,
        v: f64,
    ) -> VehicleState {
        VehicleState::new(VehicleId(id), class, movement, lane, x, v)
    }

    fn snapshot(k: f64, bus: Vec<VehicleState>, general: Vec<VehicleState>) -> StepSnapshot {
        StepSnapshot {
            k,
            bus,
            general,
            records: BoundaryRecords::default(),
            crossings: BTreeMap::new(),
        }
    }

    /// Horizon that freezes every vehicle in place: good enough for unit
    /// tests of the search structure.
    fn frozen_horizon(snap: StepSnapshot, h: f64) -> HorizonStates {
        let window = PlanningWindow::new(snap.k, 1.0, h);
        let n = window.num_steps() + 1;
        let steps = (0..n)
            .map(|i| {
                let mut s = snap.clone();
                s.k = snap.k + i as f64;
                s
            })
            .collect();
        HorizonStates { window, steps }
    }

    #[test]
    fn extent_without_buses_keeps_everything_ahead_of_right_turner() {
        let snap = snapshot(
            0.0,
            vec![veh(0, Cav, Through, Lane::Bus, 200.0, 10.0)],
            vec![
                veh(1, Cav, Through, Lane::General, 300.0, 10.0),
                veh(2, Hdv, RightTurn, Lane::General, 250.0, 10.0),
                veh(3, Hdv, Through, Lane::General, 180.0, 10.0),
            ],
        );
        let extent = define_extent(&snap, &corridor_b());
        assert_eq!(extent.general, vec![VehicleId(1)]);
        assert_eq!(extent.bus, vec![VehicleId(0)]);
        assert!(extent.t1.is_infinite());
    }

    #[test]
    fn extent_dwelling_bus_clips_and_prunes() {
        let mut bus = veh(0, Cab, Through, Lane::Bus, 150.0, 0.0);
        bus.dwell = Some(DwellState { remaining_s: 12.0, stop_index: 0 });
        let snap = snapshot(
            10.0,
            vec![bus],
            vec![
                veh(1, Cav, Through, Lane::General, 390.0, 14.0), // crosses early: kept
                veh(2, Cav, Through, Lane::General, 160.0, 1.0),  // too slow: pruned by t1
                veh(3, Cav, Through, Lane::General, 100.0, 14.0), // behind x_s: clipped
            ],
        );
        let extent = define_extent(&snap, &corridor_a());
        let t1 = 10.0 + min_travel_time(250.0, 0.0, V_MAX, A_MAX);
        assert!((extent.t1 - t1).abs() < 1e-12);
        assert_eq!(extent.general, vec![VehicleId(1)]);
        assert_eq!(extent.bus, vec![VehicleId(0)]);
    }

    #[test]
    fn extent_step4_boundary() {
        // A car whose t_p1 lands just past t1 - tau_b is removed.
        let mut bus = veh(0, Cab, Through, Lane::Bus, 150.0, 0.0);
        bus.dwell = Some(DwellState { remaining_s: 5.0, stop_index: 0 });
        let corridor = corridor_a();
        let t1 = min_travel_time(250.0, 0.0, V_MAX, A_MAX);
        let tau_b = min_headway(newell_params(Cab, Cav), V_MAX);
        // Cruising car: t_p1 = (400 - x)/14; choose x so t_p1 = t1 - tau_b + 0.1.
        let x = 400.0 - 14.0 * (t1 - tau_b + 0.1);
        let snap = snapshot(0.0, vec![bus], vec![veh(1, Cav, Through, Lane::General, x, 14.0)]);
        let extent = define_extent(&snap, &corridor);
        assert!(extent.general.is_empty());
    }

    #[test]
    fn gaps_empty_lane_is_one_full_gap() {
        let gaps = bus_lane_gaps(&[], &corridor_a());
        assert_eq!(gaps.len(), 1);
        assert_eq!((gaps[0].x_follow, gaps[0].x_lead), (0.0, 400.0));
    }

    #[test]
    fn gap_of_exactly_threshold_not_qualifying() {
        // Gap of exactly 16 m between two vehicles: 2*6 + 4 = 16, strict >.
        let bus = vec![
            veh(0, Cav, Through, Lane::Bus, 300.0, 10.0),
            veh(1, Cav, Through, Lane::Bus, 280.0, 10.0), // lead rear 296, gap 16
        ];
        let gaps = bus_lane_gaps(&bus, &corridor_a());
        assert!(gaps
            .iter()
            .all(|g| !(g.follower == Some(VehicleId(1)) && g.leader == Some(VehicleId(0)))));
    }

    #[test]
    fn mask_empty_lane_moving_cav() {
        let snap = snapshot(0.0, vec![], vec![veh(1, Cav, Through, Lane::General, 100.0, 10.0)]);
        let extent = define_extent(&snap, &corridor_a());
        let horizon = frozen_horizon(snap, 5.0);
        let mask = preallocate(&horizon, &extent, &corridor_a(), 1);
        assert!(mask.steps[0].eligible.contains_key(&VehicleId(1)));
        // Frozen prediction: every later step repeats, so only k0 remains.
        assert_eq!(mask.steps.len(), 1);
    }

    #[test]
    fn mask_rejects_no_changing_zone_and_stopped() {
        let snap = snapshot(
            0.0,
            vec![],
            vec![
                veh(1, Cav, Through, Lane::General, 380.0, 10.0), // x >= x_n
                veh(2, Cav, Through, Lane::General, 100.0, 0.0),  // stopped
            ],
        );
        let extent = define_extent(&snap, &corridor_a());
        let horizon = frozen_horizon(snap, 3.0);
        let mask = preallocate(&horizon, &extent, &corridor_a(), 1);
        assert!(mask.steps.iter().all(|s| s.eligible.is_empty()));
    }

    #[test]
    fn enumerate_counts_power_set() {
        let snap = snapshot(
            0.0,
            vec![],
            vec![
                veh(1, Cav, Through, Lane::General, 300.0, 10.0),
                veh(2, Cav, Through, Lane::General, 100.0, 10.0),
            ],
        );
        let extent = define_extent(&snap, &corridor_a());
        let horizon = frozen_horizon(snap, 2.0);
        let mask = preallocate(&horizon, &extent, &corridor_a(), 1);
        assert_eq!(mask.steps.len(), 1);
        let cands = enumerate_candidates(&mask, CANDIDATE_CAP).unwrap();
        // Positions 300 and 100 in one gap, 200 m apart: all 4 subsets.
        assert_eq!(cands.len(), 4);
    }

    #[test]
    fn same_gap_too_close_excludes_pair() {
        let snap = snapshot(
            0.0,
            vec![],
            vec![
                veh(1, Cav, Through, Lane::General, 108.0, 10.0),
                veh(2, Cav, Through, Lane::General, 100.0, 10.0), // 8 m apart <= 10
            ],
        );
        let extent = define_extent(&snap, &corridor_a());
        let horizon = frozen_horizon(snap, 2.0);
        let mask = preallocate(&horizon, &extent, &corridor_a(), 1);
        let cands = enumerate_candidates(&mask, CANDIDATE_CAP).unwrap();
        assert_eq!(cands.len(), 3, "the both-grant subset is excluded");
    }

    #[test]
    fn no_eligible_cavs_empty_plan() {
        let snap = snapshot(0.0, vec![], vec![veh(1, Hdv, Through, Lane::General, 100.0, 10.0)]);
        let extent = define_extent(&snap, &corridor_a());
        let horizon = frozen_horizon(snap, 5.0);
        let mask = preallocate(&horizon, &extent, &corridor_a(), 1);
        let problem = RowProblem {
            horizon: &horizon,
            extent: &extent,
            corridor: &corridor_a(),
            signal: &signal(),
            omega_p: 0.9,
            candidate_cap: CANDIDATE_CAP,
        };
        let plan = solve(&problem, &mask).unwrap();
        assert!(plan.is_empty());
        let oracle = solve_exhaustive(&problem, &mask).unwrap();
        assert_eq!(plan, oracle);
    }

    #[test]
    fn queued_cav_with_free_bus_lane_is_granted() {
        // A CAV stuck in an HDV queue with the bus lane free: moving it
        // strictly reduces car time with no bus to delay.
        let corridor = corridor_a();
        let snap = snapshot(
            32.0,
            vec![],
            vec![
                veh(1, Hdv, Through, Lane::General, 330.0, 4.0),
                veh(2, Hdv, Through, Lane::General, 320.0, 4.0),
                veh(3, Cav, Through, Lane::General, 310.0, 4.0),
                veh(4, Hdv, Through, Lane::General, 300.0, 4.0),
            ],
        );
        let extent = define_extent(&snap, &corridor);
        let horizon = frozen_horizon(snap, 4.0);
        let mask = preallocate(&horizon, &extent, &corridor, 1);
        let problem = RowProblem {
            horizon: &horizon,
            extent: &extent,
            corridor: &corridor,
            signal: &signal(),
            omega_p: 0.9,
            candidate_cap: CANDIDATE_CAP,
        };
        let plan = solve(&problem, &mask).unwrap();
        assert_eq!(plan.grants.len(), 1);
        assert_eq!(plan.grants[0].vehicle, VehicleId(3));
        let oracle = solve_exhaustive(&problem, &mask).unwrap();
        assert_eq!(plan, oracle);
    }

    #[test]
    fn crossed_vehicle_costed_from_registry() {
        let mut snap =
            snapshot(5.0, vec![], vec![veh(1, Cav, Through, Lane::General, 100.0, 14.0)]);
        let extent = define_extent(&snap, &corridor_a());
        snap.crossings
            .insert(VehicleId(1), Crossing { t: 3.0, v: 14.0, boundary: CrossedBoundary::StopBar });
        snap.general.clear();
        let horizon = frozen_horizon(snap, 2.0);
        let problem = RowProblem {
            horizon: &horizon,
            extent: &extent,
            corridor: &corridor_a(),
            signal: &signal(),
            omega_p: 0.9,
            candidate_cap: CANDIDATE_CAP,
        };
        let mask = preallocate(&horizon, &extent, &corridor_a(), 1);
        let plan = solve(&problem, &mask).unwrap();
        assert!(plan.is_empty());
        assert!((plan.objective - 0.1 * 3.0).abs() < 1e-12);
    }
}
