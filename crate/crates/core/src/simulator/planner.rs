//! Per-step longitudinal decisions: IDM for human drivers, Newell-bounded
//! green-window glides for automated vehicles.

use crate::domain::{SignalPlan, VehicleClass, A_MAX, V_MAX};
use crate::kinematics::{min_travel_time, newell_params};

/// IDM desired-speed exponent.
const IDM_DELTA: i32 = 4;
/// IDM comfortable deceleration (matches the acceleration bound).
const IDM_B: f64 = 2.0;
/// Rest distance of a human queue head short of the stop bar. From
/// standstill here a car needs the startup-pass time to clear the bar.
pub const STOP_SETBACK: f64 = A_MAX * crate::domain::STARTUP_PASS * crate::domain::STARTUP_PASS / 2.0;

/// A leader as seen by a follower's per-step decision.
#[derive(Clone, Copy, Debug)]
pub struct LeaderView {
    pub x: f64,
    pub v: f64,
    pub length: f64,
}

/// Intelligent Driver Model acceleration. Returns the clamped acceleration
/// and whether the emergency branch fired (non-positive gap).
pub fn idm_accel(v: f64, gap: f64, leader_v: f64) -> (f64, bool) {
    if gap <= 0.0 {
        return (-A_MAX, true);
    }
    let (t_headway, s0) = (crate::domain::TAU_HUMAN, crate::domain::BUFFER_HUMAN);
    let s_star = s0 + (v * t_headway + v * (v - leader_v) / (2.0 * (A_MAX * IDM_B).sqrt())).max(0.0);
    let accel = A_MAX * (1.0 - (v / V_MAX).powi(IDM_DELTA) - (s_star / gap).powi(2));
    (accel.clamp(-A_MAX, A_MAX), false)
}

/// Free-road IDM acceleration (no leader in range).
pub fn idm_free_accel(v: f64) -> f64 {
    A_MAX * (1.0 - (v / V_MAX).powi(IDM_DELTA))
}

/// Largest next-step speed that can still come to rest within `avail`
/// metres under the acceleration limit: covers both the spacing equilibrium
/// (gap = d + v*dt at steady state, the Newell spacing at the 1 s
/// resolution) and anticipative braking toward a slower or stopped target.
pub fn braking_feasible_speed(v: f64, avail: f64, dt: f64) -> f64 {
    let rhs = avail - v * dt / 2.0;
    if rhs <= 0.0 {
        return 0.0;
    }
    let half = A_MAX * dt / 2.0;
    (half * half + 2.0 * A_MAX * rhs).sqrt() - half
}

/// Next-step speed that keeps the Newell spacing behind a leader observed
/// at its pre-update state, allowing for the leader's own stopping
/// distance.
pub fn newell_follow_bound(x: f64, v: f64, class: VehicleClass, leader: &LeaderView, dt: f64) -> f64 {
    let p = newell_params(class, VehicleClass::Cav);
    // Spacing uses the actual leader length rather than the class default.
    let d = p.d - crate::domain::CAR_LEN + leader.length;
    let avail = leader.x - d - x + leader.v * leader.v / (2.0 * A_MAX);
    braking_feasible_speed(v, avail, dt)
}

/// Next-step speed that brings a planned vehicle to rest with its front at
/// `stop_x`.
pub fn planned_stop_bound(x: f64, v: f64, _class: VehicleClass, stop_x: f64, dt: f64) -> f64 {
    braking_feasible_speed(v, stop_x - x, dt)
}

/// Green-window speed bound for a planned through vehicle: no bound when
/// the earliest arrival lands in green, otherwise the uniform glide speed
/// that arrives exactly at the green start. A glide too slow to ride
/// degenerates into a stop just short of the bar.
pub fn glide_bound(x: f64, v: f64, t: f64, x_c: f64, signal: &SignalPlan, dt: f64) -> f64 {
    let dist = x_c - x;
    if dist <= 0.0 {
        return f64::INFINITY;
    }
    let t_arrive = t + min_travel_time(dist, v, V_MAX, A_MAX);
    let t_target = signal.release_through(t_arrive);
    if t_target <= t_arrive + 1e-9 {
        return f64::INFINITY;
    }
    let u = dist / (t_target - t);
    if u < 1.0 {
        // Crawling is not worth it; stop at the bar and leave at the green.
        planned_stop_bound(x, v, VehicleClass::Cav, x_c - 0.3, dt)
    } else {
        u
    }
}

/// Acceleration realizing the tightest of the given next-step speed
/// bounds, clamped to the vehicle's capability.
pub fn accel_from_bounds(v: f64, bounds: &[f64], dt: f64) -> f64 {
    let mut v_next = V_MAX.min(v + A_MAX * dt);
    for b in bounds {
        v_next = v_next.min(*b);
    }
    v_next = v_next.max(0.0);
    ((v_next - v) / dt).clamp(-A_MAX, A_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idm_equilibrium_at_free_speed() {
        let (a, emergency) = idm_accel(V_MAX, 1e12, V_MAX);
        assert!(a.abs() < 1e-6, "{a}");
        assert!(!emergency);
    }

    #[test]
    fn idm_rest_at_jam_gap() {
        // Stopped at the jam gap behind a stopped leader: no motion.
        let (a, _) = idm_accel(0.0, crate::domain::BUFFER_HUMAN, 0.0);
        assert!(a.abs() < 1e-9, "{a}");
    }

    #[test]
    fn idm_decelerates_when_too_close() {
        let (a, _) = idm_accel(10.0, 20.0, 10.0);
        assert!(a < 0.0, "{a}");
    }

    #[test]
    fn idm_emergency_on_nonpositive_gap() {
        let (a, emergency) = idm_accel(5.0, 0.0, 5.0);
        assert_eq!(a, -A_MAX);
        assert!(emergency);
    }

    #[test]
    fn glide_unbounded_in_open_green() {
        let signal = SignalPlan::new(60.0, 30.0).unwrap();
        // At t=31, 10 m to go at 14 m/s: crosses at ~31.7, inside green.
        assert!(glide_bound(390.0, 14.0, 31.0, 400.0, &signal, 1.0).is_infinite());
    }

    #[test]
    fn glide_slows_to_meet_green() {
        let signal = SignalPlan::new(60.0, 30.0).unwrap();
        // At t=55 with 100 m to go at 14: arrival ~62.1 in red; green at 90.
        let u = glide_bound(300.0, 14.0, 55.0, 400.0, &signal, 1.0);
        assert!((u - 100.0 / 35.0).abs() < 1e-9, "{u}");
    }

    #[test]
    fn follow_bound_reaches_newell_rest_gap() {
        // Iterating the bound against a stopped leader converges to the
        // standstill spacing d.
        let leader = LeaderView { x: 100.0, v: 0.0, length: 4.0 };
        let mut x = 20.0;
        let mut v = 14.0;
        for _ in 0..60 {
            let bound = newell_follow_bound(x, v, VehicleClass::Cav, &leader, 1.0);
            let a = accel_from_bounds(v, &[bound], 1.0);
            let v_new = (v + a).clamp(0.0, V_MAX);
            x += (v + v_new) / 2.0;
            v = v_new;
        }
        assert!(v.abs() < 1e-6);
        let gap = leader.x - leader.length - x;
        assert!((gap - crate::domain::BUFFER_AUTO).abs() < 0.2, "gap {gap}");
    }
}
