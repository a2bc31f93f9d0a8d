//! CSV emission. All numeric fields use fixed 6-decimal formatting so
//! repeated runs diff cleanly.

use crate::domain::{Lane, Movement, VehicleClass, VehicleId};

use super::metrics::Metrics;

#[derive(Clone, Copy, Debug)]
pub struct TrajRow {
    pub t: f64,
    pub id: VehicleId,
    pub class: VehicleClass,
    pub movement: Movement,
    pub lane: Lane,
    pub x: f64,
    pub v: f64,
}

pub const TRAJECTORY_HEADER: &str = "t,vehicle_id,class,movement,lane,x,v";

pub fn trajectory_csv(rows: &[TrajRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 48 + 64);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.6},{},{},{},{},{:.6},{:.6}\n",
            r.t,
            r.id,
            r.class.label(),
            r.movement.label(),
            r.lane.label(),
            r.x,
            r.v
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct EventRow {
    pub t: f64,
    pub vehicle: VehicleId,
    pub action: &'static str,
    pub reason: &'static str,
}

pub const EVENTS_HEADER: &str = "t,vehicle_id,action,reason";

pub fn events_csv(rows: &[EventRow]) -> String {
    let mut out = String::from(EVENTS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{:.6},{},{},{}\n", r.t, r.vehicle, r.action, r.reason));
    }
    out
}

/// Per-vehicle rows followed by an aggregate block; section markers start
/// with '#'.
pub fn metrics_csv(metrics: &Metrics) -> String {
    let mut out = String::from("# vehicles\n");
    out.push_str("vehicle_id,class,movement,entry_time,entered_at,exit_time,travel_time,in_aggregate,lane_history\n");
    for r in metrics.vehicles.values() {
        let (exit, travel) = match r.exit {
            Some(t) => (format!("{t:.6}"), format!("{:.6}", t - r.scheduled_entry)),
            None => (String::new(), String::new()),
        };
        let in_agg = r.exit.is_some() && r.scheduled_entry >= metrics.warmup;
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{},{},{}\n",
            r.id,
            r.class.label(),
            r.movement.label(),
            r.scheduled_entry,
            r.entered_at,
            exit,
            travel,
            if in_agg { 1 } else { 0 },
            r.lane_history_label(),
        ));
    }
    out.push_str("# aggregates\n");
    out.push_str("metric,value\n");
    for (key, value) in metrics.aggregate_rows() {
        out.push_str(&format!("{key},{value:.6}\n"));
    }
    out
}
