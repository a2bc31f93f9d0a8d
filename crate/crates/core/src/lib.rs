//! Corridor microsimulation and right-of-way optimization for a dynamic
//! bus priority lane.
//!
//! A single signalized approach carries a general lane and a bus lane
//! (optionally with a right-turn pocket). Connected autonomous vehicles may
//! be granted temporary right-of-way in the bus lane by a rolling-horizon
//! optimizer that prices each candidate lane change through virtual-vehicle
//! passing-state estimates, while an adaptive protocol validates and, when
//! traffic drifts, cancels outstanding grants.

pub mod controller;
pub mod domain;
pub mod estimator;
pub mod kinematics;
pub mod optimizer;
pub mod simulator;

pub use domain::{
    Corridor, Lane, Movement, Phase, PlanningWindow, RowPlan, ScenarioConfig, SignalPlan,
    Strategy, VehicleClass, VehicleId, VehicleState,
};
