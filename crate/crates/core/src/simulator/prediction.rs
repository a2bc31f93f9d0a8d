//! No-action prediction: rolls a clone of the corridor forward through the
//! planning window using shared planned trajectories for automated
//! vehicles and noise-free IDM for human drivers. Dwell durations are not
//! observable, so dwelling buses hold for the whole horizon.

use std::collections::BTreeMap;

use crate::domain::{Lane, PlanningWindow, VehicleId};
use crate::estimator::{CrossedBoundary, Crossing, HorizonStates, StepSnapshot};

use super::dynamics::{AdvanceMode, CoreState, ExitKind};

/// Builds predicted snapshots for every step of the window plus
/// `extra_steps` beyond it (the post-change ordering check looks that far
/// ahead).
pub fn predict(core: &CoreState, window: PlanningWindow, extra_steps: usize) -> HorizonStates {
    let mut twin = core.clone();
    let mut crossings: BTreeMap<VehicleId, Crossing> = BTreeMap::new();
    let total = window.num_steps() + extra_steps;
    let mut steps = Vec::with_capacity(total);
    steps.push(snapshot_of(&twin, window.k0, &crossings));

    let dt = window.dk;
    for i in 1..total {
        let t_prev = window.k0 + (i as f64 - 1.0) * dt;
        let moves = twin.mandatory_lane_moves(t_prev);
        for mv in &moves {
            if mv.pocket_entry {
                let v = twin
                    .lane(Lane::Pocket)
                    .iter()
                    .find(|veh| veh.id == mv.id)
                    .map_or(0.0, |veh| veh.v);
                crossings.insert(
                    mv.id,
                    Crossing { t: t_prev, v, boundary: CrossedBoundary::PocketEntrance },
                );
            }
        }
        let outcome = twin.advance(t_prev, dt, AdvanceMode::Prediction);
        for entry in &outcome.pocket_entries {
            crossings.insert(
                entry.id,
                Crossing { t: entry.t, v: entry.v, boundary: CrossedBoundary::PocketEntrance },
            );
        }
        for exit in &outcome.exits {
            if exit.kind == ExitKind::StopBar {
                crossings.insert(
                    exit.vehicle.id,
                    Crossing {
                        t: exit.t_cross,
                        v: exit.v_cross,
                        boundary: CrossedBoundary::StopBar,
                    },
                );
            }
        }
        steps.push(snapshot_of(&twin, t_prev + dt, &crossings));
    }
    HorizonStates { window, steps }
}

pub fn snapshot_of(
    core: &CoreState,
    k: f64,
    crossings: &BTreeMap<VehicleId, Crossing>,
) -> StepSnapshot {
    StepSnapshot {
        k,
        bus: core.lane(Lane::Bus).iter().map(|v| v.to_state(Lane::Bus)).collect(),
        general: core.lane(Lane::General).iter().map(|v| v.to_state(Lane::General)).collect(),
        records: core.records,
        crossings: crossings.clone(),
    }
}
