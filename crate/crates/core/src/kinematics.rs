//! Closed-form minimum travel time and per-class Newell headway/spacing
//! calculus. Everything here is a pure function of its arguments.

use crate::domain::{VehicleClass, BUFFER_AUTO, BUFFER_HUMAN, TAU_AUTO, TAU_HUMAN};

/// Newell car-following displacements for a follower/leader pair: temporal
/// displacement `tau` (s) and spatial displacement `d` (m, includes the
/// leader's length).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewellParams {
    pub tau: f64,
    pub d: f64,
}

/// Minimum time to cover `dist` starting at speed `v0`, accelerating at
/// `amax` up to `vmax` and cruising from there. Deceleration never helps a
/// minimum-time traversal, so the profile has only those two phases.
pub fn min_travel_time(dist: f64, v0: f64, vmax: f64, amax: f64) -> f64 {
    assert!(dist >= 0.0, "negative distance {dist}");
    assert!(v0 >= 0.0 && v0 <= vmax + 1e-9, "speed {v0} outside [0, {vmax}]");
    assert!(amax > 0.0, "non-positive acceleration {amax}");
    let v0 = v0.min(vmax);
    let t_acc = (vmax - v0) / amax;
    let s_acc = 0.5 * (vmax + v0) * t_acc;
    if s_acc > dist {
        // Still accelerating when the distance runs out.
        ((v0 * v0 + 2.0 * amax * dist).sqrt() - v0) / amax
    } else {
        t_acc + (dist - s_acc) / vmax
    }
}

/// Newell displacements for `follower` behind `leader`.
pub fn newell_params(follower: VehicleClass, leader: VehicleClass) -> NewellParams {
    let (tau, buffer) = if follower.is_automated() {
        (TAU_AUTO, BUFFER_AUTO)
    } else {
        (TAU_HUMAN, BUFFER_HUMAN)
    };
    NewellParams { tau, d: buffer + leader.length() }
}

/// Minimum time headway at speed `v`: tau + d / v. Undefined for a stopped
/// pair; callers handle v = 0 through the signal-release path instead.
pub fn min_headway(p: NewellParams, v: f64) -> f64 {
    assert!(v > 0.0, "headway undefined at speed {v}");
    p.tau + p.d / v
}

/// Minimum safe spacing at speed `v`: tau * v + d. Equals `d` at standstill.
pub fn min_gap(p: NewellParams, v: f64) -> f64 {
    assert!(v >= 0.0, "negative speed {v}");
    p.tau * v + p.d
}
