//! Per-vehicle travel records and run-level aggregates.

use std::collections::BTreeMap;

use crate::domain::{Lane, Movement, VehicleClass, VehicleId};

/// One vehicle's journey. Travel time runs from the scheduled arrival (so
/// queued entries pay their entry delay) to the stop-bar or pocket exit.
#[derive(Clone, Debug)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub movement: Movement,
    pub scheduled_entry: f64,
    pub entered_at: f64,
    pub exit: Option<f64>,
    pub lane_history: Vec<(f64, Lane)>,
    pub used_bus_lane: bool,
}

impl VehicleRecord {
    pub fn travel_time(&self) -> Option<f64> {
        self.exit.map(|t| t - self.scheduled_entry)
    }

    pub fn lane_history_label(&self) -> String {
        self.lane_history
            .iter()
            .map(|(t, lane)| format!("{}@{:.1}", lane.label(), t))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SafetyCounters {
    pub gap_violations: u64,
    pub red_crossings: u64,
    pub emergency_clamps: u64,
    pub ebl_purity_violations: u64,
}

/// Everything measured over one run.
#[derive(Clone, Debug)]
pub struct Metrics {
    pub vehicles: BTreeMap<VehicleId, VehicleRecord>,
    pub safety: SafetyCounters,
    /// Vehicles entering before this time are excluded from aggregates.
    pub warmup: f64,
    pub duration: f64,
    /// (class, movement) of vehicles still in the corridor at the end.
    pub remaining: Vec<(VehicleClass, Movement)>,
}

impl Metrics {
    pub fn new(duration: f64, warmup: f64) -> Metrics {
        Metrics {
            vehicles: BTreeMap::new(),
            safety: SafetyCounters::default(),
            warmup,
            duration,
            remaining: Vec::new(),
        }
    }

    fn in_aggregate(&self, r: &VehicleRecord) -> bool {
        r.exit.is_some() && r.scheduled_entry >= self.warmup
    }

    /// Mean travel time over completed post-warm-up vehicles matching the
    /// filter, with the sample count.
    pub fn mean_travel(&self, filter: impl Fn(&VehicleRecord) -> bool) -> (f64, usize) {
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in self.vehicles.values() {
            if self.in_aggregate(r) && filter(r) {
                sum += r.travel_time().unwrap();
                n += 1;
            }
        }
        (if n > 0 { sum / n as f64 } else { 0.0 }, n)
    }

    pub fn mean_travel_cars(&self) -> (f64, usize) {
        self.mean_travel(|r| r.class.is_car())
    }

    pub fn mean_travel_class(&self, class: VehicleClass) -> (f64, usize) {
        self.mean_travel(|r| r.class == class)
    }

    /// Spawned/exited/remaining tallies agree for every class and
    /// movement when no vehicle was lost or duplicated.
    pub fn conservation_ok(&self) -> bool {
        let mut balance: BTreeMap<(&'static str, &'static str), i64> = BTreeMap::new();
        for r in self.vehicles.values() {
            *balance.entry((r.class.label(), r.movement.label())).or_default() += 1;
            if r.exit.is_some() {
                *balance.entry((r.class.label(), r.movement.label())).or_default() -= 1;
            }
        }
        for (class, movement) in &self.remaining {
            *balance.entry((class.label(), movement.label())).or_default() -= 1;
        }
        balance.values().all(|v| *v == 0)
    }

    /// Aggregate block rows, recomputable from the per-vehicle rows.
    pub fn aggregate_rows(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        let mut add = |label: &str, pair: (f64, usize)| {
            rows.push((format!("mean_travel_time_{label}"), pair.0));
            rows.push((format!("completed_{label}"), pair.1 as f64));
        };
        add("car", self.mean_travel_cars());
        add("cav", self.mean_travel_class(VehicleClass::Cav));
        add("hdv", self.mean_travel_class(VehicleClass::Hdv));
        add("cab", self.mean_travel_class(VehicleClass::Cab));
        add(
            "through_car",
            self.mean_travel(|r| r.class.is_car() && r.movement == Movement::Through),
        );
        add(
            "right_turn_car",
            self.mean_travel(|r| r.class.is_car() && r.movement == Movement::RightTurn),
        );
        rows.push(("spawned_total".into(), self.vehicles.len() as f64));
        rows.push((
            "exited_total".into(),
            self.vehicles.values().filter(|r| r.exit.is_some()).count() as f64,
        ));
        rows.push(("remaining_total".into(), self.remaining.len() as f64));
        rows.push(("gap_violations".into(), self.safety.gap_violations as f64));
        rows.push(("red_crossings".into(), self.safety.red_crossings as f64));
        rows.push(("emergency_clamps".into(), self.safety.emergency_clamps as f64));
        rows.push((
            "ebl_purity_violations".into(),
            self.safety.ebl_purity_violations as f64,
        ));
        rows.push(("conservation_ok".into(), if self.conservation_ok() { 1.0 } else { 0.0 }));
        rows
    }
}
