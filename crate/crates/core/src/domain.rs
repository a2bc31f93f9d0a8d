//! Shared data model: vehicles, corridor geometry, signal timing, plans and
//! scenario configuration.

use std::fmt;

use thiserror::Error;

/// Maximum vehicle speed in m/s (cars and buses alike).
pub const V_MAX: f64 = 14.0;
/// Maximum acceleration/deceleration magnitude in m/s².
pub const A_MAX: f64 = 2.0;
/// Newell temporal displacement for automated vehicles (CAV/CAB) in s.
pub const TAU_AUTO: f64 = 1.0;
/// Newell temporal displacement for human drivers in s.
pub const TAU_HUMAN: f64 = 2.0;
/// Newell standstill buffer for automated vehicles in m.
pub const BUFFER_AUTO: f64 = 1.5;
/// Newell standstill buffer for human drivers in m.
pub const BUFFER_HUMAN: f64 = 2.5;
/// Private car length in m.
pub const CAR_LEN: f64 = 4.0;
/// Bus length in m.
pub const BUS_LEN: f64 = 8.0;
/// Human reaction time to the green light in s.
pub const GREEN_REACTION: f64 = 0.4;
/// Human start-up time to get moving and pass the stop bar in s.
pub const STARTUP_PASS: f64 = 1.5;
/// Safe bumper distance required on both sides of a lane change in m.
pub const D_SAFE: f64 = 6.0;

/// Unique vehicle identifier, assigned in spawn order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Vehicle class. Buses (CAB) travel only in the bus lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VehicleClass {
    Hdv,
    Cav,
    Cab,
}

impl VehicleClass {
    pub fn is_car(self) -> bool {
        !matches!(self, VehicleClass::Cab)
    }

    /// Vehicles that plan their own trajectories and share them.
    pub fn is_automated(self) -> bool {
        matches!(self, VehicleClass::Cav | VehicleClass::Cab)
    }

    pub fn length(self) -> f64 {
        match self {
            VehicleClass::Cab => BUS_LEN,
            _ => CAR_LEN,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VehicleClass::Hdv => "hdv",
            VehicleClass::Cav => "cav",
            VehicleClass::Cab => "cab",
        }
    }
}

/// Intended movement at the intersection. Right-turners exit through the
/// pocket and never cross the stop bar; buses are always through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Movement {
    Through,
    RightTurn,
}

impl Movement {
    pub fn label(self) -> &'static str {
        match self {
            Movement::Through => "through",
            Movement::RightTurn => "right_turn",
        }
    }
}

/// Which lane a vehicle currently occupies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Lane {
    General,
    Bus,
    Pocket,
    Departed,
}

impl Lane {
    pub fn label(self) -> &'static str {
        match self {
            Lane::General => "general",
            Lane::Bus => "bus",
            Lane::Pocket => "pocket",
            Lane::Departed => "departed",
        }
    }
}

/// Bus dwell bookkeeping while stopped at a berth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DwellState {
    pub remaining_s: f64,
    pub stop_index: usize,
}

/// One vehicle's kinematic state at a time step. Positions are front-bumper
/// metres from the corridor entry, increasing toward the stop bar.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub movement: Movement,
    pub lane: Lane,
    pub x: f64,
    pub v: f64,
    pub length: f64,
    pub is_virtual: bool,
    pub dwell: Option<DwellState>,
}

impl VehicleState {
    pub fn new(
        id: VehicleId,
        class: VehicleClass,
        movement: Movement,
        lane: Lane,
        x: f64,
        v: f64,
    ) -> Self {
        VehicleState {
            id,
            class,
            movement,
            lane,
            x,
            v,
            length: class.length(),
            is_virtual: false,
            dwell: None,
        }
    }

    /// Rear bumper position.
    pub fn rear(&self) -> f64 {
        self.x - self.length
    }
}

/// Immutable corridor geometry. `x_w` is absent when the road has no
/// right-turn pocket (scenario A).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corridor {
    /// Stop bar position in m.
    pub x_c: f64,
    /// Start of the no-changing zone (absolute position; lane changes are
    /// forbidden at x >= x_n).
    pub x_n: f64,
    /// Right-turn pocket entrance position, when a pocket exists.
    pub x_w: Option<f64>,
    /// Bus stop position.
    pub x_s: f64,
    /// Total control zone length (= x_c with entry at 0).
    pub control_len: f64,
    /// Pocket length in m, when a pocket exists.
    pub pocket_len: Option<f64>,
    /// Number of buses the stop can hold simultaneously.
    pub stop_capacity: usize,
}

impl Corridor {
    pub fn new(
        control_len: f64,
        no_change_len: f64,
        x_s: f64,
        pocket_len: Option<f64>,
        stop_capacity: usize,
    ) -> Result<Corridor, ConfigError> {
        let x_c = control_len;
        let x_n = x_c - no_change_len;
        let x_w = pocket_len.map(|len| x_c - len);
        if x_s <= 0.0 || x_s >= x_c {
            return Err(ConfigError::Range {
                key: "x_s".into(),
                message: format!("bus stop must lie inside (0, {x_c})"),
            });
        }
        if let Some(xw) = x_w {
            if !(x_s < xw && xw < x_n) {
                return Err(ConfigError::Range {
                    key: "pocket_len".into(),
                    message: format!(
                        "pocket entrance {xw} must satisfy x_s < x_w < x_n ({x_s} < {xw} < {x_n})"
                    ),
                });
            }
        }
        if x_n <= 0.0 || x_n >= x_c {
            return Err(ConfigError::Range {
                key: "no_change_len".into(),
                message: "no-changing zone must be shorter than the corridor".into(),
            });
        }
        Ok(Corridor { x_c, x_n, x_w, x_s, control_len, pocket_len, stop_capacity })
    }

    pub fn has_pocket(&self) -> bool {
        self.x_w.is_some()
    }
}

/// Signal phase at an instant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Red,
    Green,
}

/// Fixed-cycle signal plan. Each cycle starts red: red occupies
/// [n*t_c, n*t_c + t_r), green occupies [n*t_c + t_r, (n+1)*t_c).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalPlan {
    pub t_c: f64,
    pub t_r: f64,
    pub t_g: f64,
}

impl SignalPlan {
    pub fn new(t_c: f64, t_r: f64) -> Result<SignalPlan, ConfigError> {
        if !(t_c > 0.0 && t_r > 0.0 && t_r < t_c) {
            return Err(ConfigError::Range {
                key: "t_r".into(),
                message: format!("red duration {t_r} must lie inside (0, t_c={t_c})"),
            });
        }
        Ok(SignalPlan { t_c, t_r, t_g: t_c - t_r })
    }

    /// Phase at absolute time `t` (t >= 0).
    pub fn phase_at(&self, t: f64) -> Phase {
        debug_assert!(t >= 0.0, "signal queried before time zero");
        if t.rem_euclid(self.t_c) < self.t_r {
            Phase::Red
        } else {
            Phase::Green
        }
    }

    /// End of the red interval in the cycle containing `t` (floor
    /// convention): floor(t / t_c) * t_c + t_r.
    pub fn cycle_red_end(&self, t: f64) -> f64 {
        (t / self.t_c).floor() * self.t_c + self.t_r
    }

    /// Earliest instant >= `t` at which a through vehicle may cross.
    pub fn release_through(&self, t: f64) -> f64 {
        t.max(self.cycle_red_end(t))
    }

    /// Start of the green interval of the cycle containing `t`.
    pub fn green_start(&self, t: f64) -> f64 {
        self.cycle_red_end(t)
    }
}

/// Planning horizon: the step set K = {k0, k0+dk, ..., k0+h}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanningWindow {
    pub k0: f64,
    pub dk: f64,
    pub h: f64,
}

impl PlanningWindow {
    pub fn new(k0: f64, dk: f64, h: f64) -> PlanningWindow {
        assert!(dk > 0.0 && h >= 0.0, "window must have positive step");
        let n = (h / dk).round();
        assert!(
            (n * dk - h).abs() < 1e-9,
            "step length {dk} must divide horizon {h}"
        );
        PlanningWindow { k0, dk, h }
    }

    pub fn num_steps(&self) -> usize {
        (self.h / self.dk).round() as usize + 1
    }

    pub fn steps(&self) -> Vec<f64> {
        (0..self.num_steps())
            .map(|n| self.k0 + n as f64 * self.dk)
            .collect()
    }
}

/// One granted lane change: the vehicle, and the bus-lane neighbours it is
/// expected to slot between at the change time.
#[derive(Clone, Debug, PartialEq)]
pub struct Grant {
    pub vehicle: VehicleId,
    pub predecessor: Option<VehicleId>,
    pub follower: Option<VehicleId>,
}

/// Optimizer output: a single recommendation time and the set of CAVs
/// granted right-of-way at it.
#[derive(Clone, Debug, PartialEq)]
pub struct RowPlan {
    /// Recommended lane-change time in s.
    pub k_c: f64,
    pub grants: Vec<Grant>,
    /// Weighted travel time objective achieved by this plan.
    pub objective: f64,
}

impl RowPlan {
    pub fn empty(k_c: f64, objective: f64) -> RowPlan {
        RowPlan { k_c, grants: Vec::new(), objective }
    }

    pub fn is_empty(&self) -> bool {
        self.grants.is_empty()
    }
}

/// Lane usage strategy under test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Exclusive bus lane: cars stay out (right-turners may still borrow it
    /// to reach the pocket).
    Ebl,
    /// Dynamic bus priority lane: the optimizer admits selected CAVs.
    Dbpl,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Ebl => "ebl",
            Strategy::Dbpl => "dbpl",
        }
    }
}

/// Errors raised while loading or validating a scenario file.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{key}: {message}")]
    Range { key: String, message: String },
}

/// Full description of one simulation run. The seed determines every random
/// draw, so a config plus a strategy replays exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub corridor: Corridor,
    pub signal: SignalPlan,
    /// Through-car demand in veh/h.
    pub q_veh: f64,
    pub bus_interval_mean: f64,
    pub bus_interval_std: f64,
    pub dwell_mean: f64,
    pub dwell_std: f64,
    pub right_turn_ratio: f64,
    /// CAV market penetration rate among cars.
    pub mpr: f64,
    /// Bus priority weight in the objective.
    pub omega_p: f64,
    pub seed: u64,
    /// Simulated duration in s.
    pub duration: f64,
    pub strategy: Strategy,
    /// Optimizer step length in s.
    pub dk: f64,
    /// Optimizer horizon length in s.
    pub horizon: f64,
    /// Lane-change duration in steps.
    pub k_lc: f64,
    /// Distance upstream of the pocket entrance where right-turners start
    /// seeking a bus-lane gap, in m.
    pub d_rt: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            corridor: Corridor::new(400.0, 30.0, 150.0, None, 2).unwrap(),
            signal: SignalPlan::new(60.0, 30.0).unwrap(),
            q_veh: 720.0,
            bus_interval_mean: 60.0,
            bus_interval_std: 20.0,
            dwell_mean: 30.0,
            dwell_std: 20.0,
            right_turn_ratio: 0.0,
            mpr: 0.0,
            omega_p: 0.9,
            seed: 1,
            duration: 1800.0,
            strategy: Strategy::Ebl,
            dk: 1.0,
            horizon: 10.0,
            k_lc: 1.0,
            d_rt: 100.0,
        }
    }
}

impl ScenarioConfig {
    /// Parses the flat `key=value` scenario format. Unknown keys are
    /// rejected; omitted keys keep their benchmark defaults.
    pub fn parse_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let mut raw = RawConfig::default();
        for (line_no, line) in text.lines().enumerate() {
            let line_no = line_no + 1;
            let stripped = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            };
            for entry in stripped.split(',') {
                let entry = entry.trim();
                if entry.is_empty() {
                    continue;
                }
                let (key, value) = entry.split_once('=').ok_or_else(|| ConfigError::Parse {
                    line: line_no,
                    message: format!("expected key=value, got {entry:?}"),
                })?;
                raw.set(key.trim(), value.trim(), line_no)?;
            }
        }
        raw.build()
    }

    /// Serializes to the same flat text format `parse_str` reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = &self.corridor;
        out.push_str(&format!("control_len={}\n", c.control_len));
        out.push_str(&format!("no_change_len={}\n", c.x_c - c.x_n));
        out.push_str(&format!("x_s={}\n", c.x_s));
        out.push_str(&format!("pocket={}\n", if c.has_pocket() { "yes" } else { "no" }));
        if let Some(len) = c.pocket_len {
            out.push_str(&format!("pocket_len={len}\n"));
        }
        out.push_str(&format!("stop_capacity={}\n", c.stop_capacity));
        out.push_str(&format!("t_c={}\n", self.signal.t_c));
        out.push_str(&format!("t_r={}\n", self.signal.t_r));
        out.push_str(&format!("q_veh={}\n", self.q_veh));
        out.push_str(&format!("bus_interval_mean={}\n", self.bus_interval_mean));
        out.push_str(&format!("bus_interval_std={}\n", self.bus_interval_std));
        out.push_str(&format!("dwell_mean={}\n", self.dwell_mean));
        out.push_str(&format!("dwell_std={}\n", self.dwell_std));
        out.push_str(&format!("right_turn_ratio={}\n", self.right_turn_ratio));
        out.push_str(&format!("mpr={}\n", self.mpr));
        out.push_str(&format!("omega_p={}\n", self.omega_p));
        out.push_str(&format!("seed={}\n", self.seed));
        out.push_str(&format!("duration={}\n", self.duration));
        out.push_str(&format!("strategy={}\n", self.strategy.label()));
        out.push_str(&format!("dk={}\n", self.dk));
        out.push_str(&format!("horizon={}\n", self.horizon));
        out.push_str(&format!("k_lc={}\n", self.k_lc));
        out.push_str(&format!("d_rt={}\n", self.d_rt));
        out
    }

    pub fn planning_window(&self, k0: f64) -> PlanningWindow {
        PlanningWindow::new(k0, self.dk, self.horizon)
    }
}

/// Accumulates raw key/value pairs before validation so defaults and
/// cross-field checks apply at the end.
#[derive(Default)]
struct RawConfig {
    control_len: Option<f64>,
    no_change_len: Option<f64>,
    x_s: Option<f64>,
    pocket: Option<bool>,
    pocket_len: Option<f64>,
    stop_capacity: Option<usize>,
    t_c: Option<f64>,
    t_r: Option<f64>,
    t_g: Option<f64>,
    q_veh: Option<f64>,
    bus_interval_mean: Option<f64>,
    bus_interval_std: Option<f64>,
    dwell_mean: Option<f64>,
    dwell_std: Option<f64>,
    right_turn_ratio: Option<f64>,
    mpr: Option<f64>,
    omega_p: Option<f64>,
    seed: Option<u64>,
    duration: Option<f64>,
    strategy: Option<Strategy>,
    dk: Option<f64>,
    horizon: Option<f64>,
    k_lc: Option<f64>,
    d_rt: Option<f64>,
}

impl RawConfig {
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn num(key: &str, value: &str, line: usize) -> Result<f64, ConfigError> {
            value.parse::<f64>().map_err(|_| ConfigError::Parse {
                line,
                message: format!("{key}: expected a number, got {value:?}"),
            })
        }
        match key {
            "control_len" => self.control_len = Some(num(key, value, line)?),
            "no_change_len" => self.no_change_len = Some(num(key, value, line)?),
            "x_s" => self.x_s = Some(num(key, value, line)?),
            "pocket" => {
                self.pocket = Some(match value {
                    "yes" | "true" | "1" => true,
                    "no" | "false" | "0" => false,
                    other => {
                        return Err(ConfigError::Parse {
                            line,
                            message: format!("pocket: expected yes/no, got {other:?}"),
                        })
                    }
                })
            }
            "pocket_len" => self.pocket_len = Some(num(key, value, line)?),
            "stop_capacity" => {
                self.stop_capacity = Some(value.parse().map_err(|_| ConfigError::Parse {
                    line,
                    message: format!("stop_capacity: expected an integer, got {value:?}"),
                })?)
            }
            "t_c" => self.t_c = Some(num(key, value, line)?),
            "t_r" => self.t_r = Some(num(key, value, line)?),
            "t_g" => self.t_g = Some(num(key, value, line)?),
            "q_veh" => self.q_veh = Some(num(key, value, line)?),
            "bus_interval_mean" => self.bus_interval_mean = Some(num(key, value, line)?),
            "bus_interval_std" => self.bus_interval_std = Some(num(key, value, line)?),
            "dwell_mean" => self.dwell_mean = Some(num(key, value, line)?),
            "dwell_std" => self.dwell_std = Some(num(key, value, line)?),
            "right_turn_ratio" => self.right_turn_ratio = Some(num(key, value, line)?),
            "mpr" => self.mpr = Some(num(key, value, line)?),
            "omega_p" => self.omega_p = Some(num(key, value, line)?),
            "seed" => {
                self.seed = Some(value.parse().map_err(|_| ConfigError::Parse {
                    line,
                    message: format!("seed: expected an integer, got {value:?}"),
                })?)
            }
            "duration" => self.duration = Some(num(key, value, line)?),
            "strategy" => {
                self.strategy = Some(match value.to_ascii_lowercase().as_str() {
                    "ebl" => Strategy::Ebl,
                    "dbpl" => Strategy::Dbpl,
                    other => {
                        return Err(ConfigError::Parse {
                            line,
                            message: format!("strategy: expected ebl or dbpl, got {other:?}"),
                        })
                    }
                })
            }
            "dk" => self.dk = Some(num(key, value, line)?),
            "horizon" => self.horizon = Some(num(key, value, line)?),
            "k_lc" => self.k_lc = Some(num(key, value, line)?),
            "d_rt" => self.d_rt = Some(num(key, value, line)?),
            other => {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("unknown key {other:?}"),
                })
            }
        }
        Ok(())
    }

    fn build(self) -> Result<ScenarioConfig, ConfigError> {
        let defaults = ScenarioConfig::default();

        fn ratio(key: &str, value: f64) -> Result<f64, ConfigError> {
            if (0.0..=1.0).contains(&value) {
                Ok(value)
            } else {
                Err(ConfigError::Range {
                    key: key.into(),
                    message: format!("must lie in [0, 1], got {value}"),
                })
            }
        }
        fn positive(key: &str, value: f64) -> Result<f64, ConfigError> {
            if value > 0.0 {
                Ok(value)
            } else {
                Err(ConfigError::Range {
                    key: key.into(),
                    message: format!("must be positive, got {value}"),
                })
            }
        }
        fn non_negative(key: &str, value: f64) -> Result<f64, ConfigError> {
            if value >= 0.0 {
                Ok(value)
            } else {
                Err(ConfigError::Range {
                    key: key.into(),
                    message: format!("must be non-negative, got {value}"),
                })
            }
        }

        let pocket = self.pocket.unwrap_or(false);
        let pocket_len = if pocket {
            Some(positive("pocket_len", self.pocket_len.unwrap_or(130.0))?)
        } else {
            None
        };
        let right_turn_ratio = ratio(
            "right_turn_ratio",
            self.right_turn_ratio.unwrap_or(defaults.right_turn_ratio),
        )?;
        if right_turn_ratio > 0.0 && !pocket {
            return Err(ConfigError::Range {
                key: "right_turn_ratio".into(),
                message: "right turns require pocket=yes".into(),
            });
        }

        let corridor = Corridor::new(
            positive("control_len", self.control_len.unwrap_or(400.0))?,
            positive("no_change_len", self.no_change_len.unwrap_or(30.0))?,
            positive("x_s", self.x_s.unwrap_or(150.0))?,
            pocket_len,
            self.stop_capacity.unwrap_or(2),
        )?;

        let t_c = positive("t_c", self.t_c.unwrap_or(60.0))?;
        let t_r = positive("t_r", self.t_r.unwrap_or(30.0))?;
        if let Some(t_g) = self.t_g {
            if (t_r + t_g - t_c).abs() > 1e-9 {
                return Err(ConfigError::Range {
                    key: "t_g".into(),
                    message: format!("t_r + t_g must equal t_c ({t_r} + {t_g} != {t_c})"),
                });
            }
        }
        let signal = SignalPlan::new(t_c, t_r)?;

        let dk = positive("dk", self.dk.unwrap_or(defaults.dk))?;
        let horizon = non_negative("horizon", self.horizon.unwrap_or(defaults.horizon))?;
        let steps = horizon / dk;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(ConfigError::Range {
                key: "horizon".into(),
                message: format!("dk={dk} must divide horizon={horizon}"),
            });
        }

        Ok(ScenarioConfig {
            corridor,
            signal,
            q_veh: non_negative("q_veh", self.q_veh.unwrap_or(defaults.q_veh))?,
            bus_interval_mean: positive(
                "bus_interval_mean",
                self.bus_interval_mean.unwrap_or(defaults.bus_interval_mean),
            )?,
            bus_interval_std: non_negative(
                "bus_interval_std",
                self.bus_interval_std.unwrap_or(defaults.bus_interval_std),
            )?,
            dwell_mean: positive("dwell_mean", self.dwell_mean.unwrap_or(defaults.dwell_mean))?,
            dwell_std: non_negative("dwell_std", self.dwell_std.unwrap_or(defaults.dwell_std))?,
            right_turn_ratio,
            mpr: ratio("mpr", self.mpr.unwrap_or(defaults.mpr))?,
            omega_p: ratio("omega_p", self.omega_p.unwrap_or(defaults.omega_p))?,
            seed: self.seed.unwrap_or(defaults.seed),
            duration: non_negative("duration", self.duration.unwrap_or(defaults.duration))?,
            strategy: self.strategy.unwrap_or(defaults.strategy),
            dk,
            horizon,
            k_lc: positive("k_lc", self.k_lc.unwrap_or(defaults.k_lc))?,
            d_rt: positive("d_rt", self.d_rt.unwrap_or(defaults.d_rt))?,
        })
    }
}
