//! Rolling-horizon adaptive right-of-way protocol: re-optimize whenever no
//! grants are outstanding, otherwise validate the pending plan each step
//! after the commanded change time and cancel everything once traffic has
//! drifted from the plan's assumptions.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{Corridor, RowPlan, SignalPlan, VehicleId, VehicleState, D_SAFE};
use crate::estimator::{HorizonStates, StepSnapshot};
use crate::optimizer::{define_extent, preallocate, solve, OptimizeError, RowProblem};

/// Controller bookkeeping between steps. `outstanding` is the set of
/// granted vehicles that have not yet been seen in the bus lane; it is
/// empty exactly when no plan is pending.
#[derive(Clone, Debug, Default)]
pub struct ControllerState {
    pub plan: Option<RowPlan>,
    pub outstanding: BTreeSet<VehicleId>,
    pub k_c: f64,
}

impl ControllerState {
    fn cleared() -> ControllerState {
        ControllerState::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandAction {
    Recommend,
    Cancel,
}

/// A message from the control center to one vehicle.
#[derive(Clone, Debug)]
pub struct Command {
    pub vehicle: VehicleId,
    pub action: CommandAction,
    /// Commanded change time (for recommendations).
    pub k_c: f64,
    pub predecessor: Option<VehicleId>,
    pub follower: Option<VehicleId>,
    pub reason: &'static str,
}

/// Everything one protocol step can see. The horizon is only needed when
/// no grants are outstanding (the re-optimization branch).
pub struct PlanningView<'a> {
    pub now: &'a StepSnapshot,
    pub horizon: Option<&'a HorizonStates>,
    pub corridor: &'a Corridor,
    pub signal: &'a SignalPlan,
    pub omega_p: f64,
    pub k_lc_steps: usize,
    pub candidate_cap: u128,
}

fn bus_lane_neighbors(snap: &StepSnapshot, x: f64) -> (Option<&VehicleState>, Option<&VehicleState>) {
    let mut leader: Option<&VehicleState> = None;
    let mut follower: Option<&VehicleState> = None;
    for v in &snap.bus {
        if v.x >= x {
            if leader.is_none_or(|l| v.x < l.x) {
                leader = Some(v);
            }
        } else if follower.is_none_or(|f| v.x > f.x) {
            follower = Some(v);
        }
    }
    (leader, follower)
}

/// One protocol step at the current time `view.now.k`.
pub fn tick(
    ctrl: &ControllerState,
    view: &PlanningView<'_>,
) -> Result<(ControllerState, Vec<Command>), OptimizeError> {
    let k0 = view.now.k;

    if ctrl.outstanding.is_empty() {
        let horizon = view.horizon.expect("re-optimization requires a prediction horizon");
        let extent = define_extent(horizon.step(0), view.corridor);
        let mask = preallocate(horizon, &extent, view.corridor, view.k_lc_steps);
        let problem = RowProblem {
            horizon,
            extent: &extent,
            corridor: view.corridor,
            signal: view.signal,
            omega_p: view.omega_p,
            candidate_cap: view.candidate_cap,
        };
        let plan = solve(&problem, &mask)?;
        if plan.is_empty() {
            return Ok((ControllerState::cleared(), Vec::new()));
        }
        let commands = plan
            .grants
            .iter()
            .map(|g| Command {
                vehicle: g.vehicle,
                action: CommandAction::Recommend,
                k_c: plan.k_c,
                predecessor: g.predecessor,
                follower: g.follower,
                reason: "row_granted",
            })
            .collect();
        let outstanding = plan.grants.iter().map(|g| g.vehicle).collect();
        let k_c = plan.k_c;
        return Ok((ControllerState { plan: Some(plan), outstanding, k_c }, commands));
    }

    if k0 > ctrl.k_c {
        let plan = ctrl.plan.as_ref().expect("outstanding grants without a plan");
        let mut remaining = BTreeSet::new();
        let mut cancel_all = false;
        for id in &ctrl.outstanding {
            let state = view.now.general.iter().find(|v| v.id == *id);
            let Some(state) = state else {
                // Already in the bus lane (or gone entirely): the grant is
                // settled either way.
                continue;
            };
            let grant = plan
                .grants
                .iter()
                .find(|g| g.vehicle == *id)
                .expect("outstanding vehicle missing from plan");
            let (leader, follower) = bus_lane_neighbors(view.now, state.x);
            let d_p = leader.map_or(f64::INFINITY, |l| l.rear() - state.x - D_SAFE);
            let d_f = follower.map_or(f64::INFINITY, |f| state.rear() - f.x - D_SAFE);
            let pred_matches = leader.map(|l| l.id) == grant.predecessor;
            if d_p < 0.0 || d_f < 0.0 || !pred_matches {
                cancel_all = true;
            }
            remaining.insert(*id);
        }
        if cancel_all {
            let commands = remaining
                .iter()
                .map(|id| Command {
                    vehicle: *id,
                    action: CommandAction::Cancel,
                    k_c: ctrl.k_c,
                    predecessor: None,
                    follower: None,
                    reason: "conditions_drifted",
                })
                .collect();
            return Ok((ControllerState::cleared(), commands));
        }
        if remaining.is_empty() {
            return Ok((ControllerState::cleared(), Vec::new()));
        }
        return Ok((
            ControllerState { plan: ctrl.plan.clone(), outstanding: remaining, k_c: ctrl.k_c },
            Vec::new(),
        ));
    }

    Ok((ctrl.clone(), Vec::new()))
}

/// A lane change a vehicle has been asked to attempt from `at` onward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendingChange {
    pub at: f64,
    pub predecessor: Option<VehicleId>,
    pub follower: Option<VehicleId>,
}

/// Applies commands to the per-vehicle pending-change marks. Commands for
/// vehicles no longer present are ignored with a warning.
pub fn apply_commands(
    commands: &[Command],
    marks: &mut BTreeMap<VehicleId, PendingChange>,
    present: impl Fn(VehicleId) -> bool,
) {
    for cmd in commands {
        if !present(cmd.vehicle) {
            log::warn!("command {:?} for departed vehicle {}", cmd.action, cmd.vehicle);
            continue;
        }
        match cmd.action {
            CommandAction::Recommend => {
                marks.insert(
                    cmd.vehicle,
                    PendingChange {
                        at: cmd.k_c,
                        predecessor: cmd.predecessor,
                        follower: cmd.follower,
                    },
                );
            }
            CommandAction::Cancel => {
                marks.remove(&cmd.vehicle);
            }
        }
    }
}
