//! Runtime vehicle records used by the plant and its prediction twin.

use crate::domain::{DwellState, Lane, Movement, VehicleClass, VehicleId, VehicleState};

/// Bus service phases along the corridor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BusPhase {
    Approach,
    Dwelling { remaining: f64, berth: usize },
    Departing,
}

/// One simulated vehicle. Positions are front-bumper metres.
#[derive(Clone, Debug)]
pub struct Vehicle {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub movement: Movement,
    pub x: f64,
    pub v: f64,
    /// Position and speed before the current integration step, kept for
    /// crossing-time interpolation.
    pub x_prev: f64,
    pub v_prev: f64,
    pub length: f64,
    /// When the arrival process scheduled this vehicle.
    pub scheduled_entry: f64,
    /// When it actually entered the corridor (>= scheduled on queued entry).
    pub entered_at: f64,
    /// Drawn dwell duration (buses).
    pub dwell_total: f64,
    pub bus_phase: Option<BusPhase>,
}

impl Vehicle {
    pub fn rear(&self) -> f64 {
        self.x - self.length
    }

    pub fn is_dwelling(&self) -> bool {
        matches!(self.bus_phase, Some(BusPhase::Dwelling { .. }))
    }

    /// Immutable state view for the estimator and controller.
    pub fn to_state(&self, lane: Lane) -> VehicleState {
        let dwell = match self.bus_phase {
            Some(BusPhase::Dwelling { remaining, berth }) => {
                Some(DwellState { remaining_s: remaining, stop_index: berth })
            }
            _ => None,
        };
        VehicleState {
            id: self.id,
            class: self.class,
            movement: self.movement,
            lane,
            x: self.x,
            v: self.v,
            length: self.length,
            is_virtual: false,
            dwell,
        }
    }
}
