//! Longitudinal car-following accelerations: LCM for human-driven vehicles,
//! IDM for autonomous vehicles, analytic jerks and equilibrium helpers.
//!
//! All operations here are pure functions of scalar state. The LCM reaction
//! delay is *not* applied here; the simulation engine buffers the output by
//! `round(tau / dt)` ticks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::VehicleState;

/// Floor for the desired safe spacing. A non-positive desired spacing means
/// any gap is safe, so the interaction term must vanish rather than blow up.
const MIN_DESIRED_SPACING: f64 = 1e-6;

/// Longitudinal Control Model parameters (human-driven vehicles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcmParams {
    /// Maximum acceleration, m/s^2.
    pub max_accel: f64,
    /// Deceleration the driver can confidently apply in an emergency, m/s^2.
    pub emergency_decel: f64,
    /// Driver's estimate of the leader's emergency deceleration, m/s^2.
    pub leader_decel_estimate: f64,
    /// Reaction time, s.
    pub reaction_time: f64,
    /// Desired speed, m/s.
    pub v_desire: f64,
}

impl Default for LcmParams {
    fn default() -> Self {
        LcmParams {
            max_accel: 1.2,
            emergency_decel: 4.0,
            leader_decel_estimate: 4.0,
            reaction_time: 1.0,
            v_desire: 25.0,
        }
    }
}

impl LcmParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lcm_params.max_accel", self.max_accel),
            ("lcm_params.emergency_decel", self.emergency_decel),
            ("lcm_params.leader_decel_estimate", self.leader_decel_estimate),
            ("lcm_params.reaction_time", self.reaction_time),
            ("lcm_params.v_desire", self.v_desire),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(name, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Intelligent Driver Model parameters (autonomous vehicles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    /// Maximum acceleration, m/s^2.
    pub max_accel: f64,
    /// Comfortable deceleration, m/s^2.
    pub comfortable_decel: f64,
    /// Acceleration exponent.
    pub delta: f64,
    /// Safe time headway, s.
    pub headway: f64,
    /// Jam spacing, m.
    pub s_jam: f64,
    /// Stopping-distance term coefficient, m.
    pub s1: f64,
    /// Desired speed, m/s.
    pub v_desire: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            max_accel: 1.0,
            comfortable_decel: 1.5,
            delta: 4.0,
            headway: 1.6,
            s_jam: 2.0,
            s1: 0.0,
            v_desire: 25.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("idm_params.max_accel", self.max_accel),
            ("idm_params.comfortable_decel", self.comfortable_decel),
            ("idm_params.headway", self.headway),
            ("idm_params.s_jam", self.s_jam),
            ("idm_params.v_desire", self.v_desire),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.s1 >= 0.0) {
            return Err(Error::config("idm_params.s1", format!("must be >= 0, got {}", self.s1)));
        }
        if !(self.delta >= 1.0) {
            return Err(Error::config("idm_params.delta", format!("must be >= 1, got {}", self.delta)));
        }
        Ok(())
    }
}

/// LCM desired safe spacing (bumper reference included via leader length).
fn lcm_desired_spacing(v_follower: f64, v_leader: f64, leader_length: f64, p: &LcmParams) -> f64 {
    v_follower * v_follower / (2.0 * p.emergency_decel)
        - v_leader * v_leader / (2.0 * p.leader_decel_estimate)
        + v_follower * p.reaction_time
        + leader_length
}

/// LCM acceleration from scalar state. `spacing` is the center-to-center
/// spacing x_leader - x_follower.
pub fn lcm_accel_raw(
    v_follower: f64,
    v_leader: f64,
    spacing: f64,
    leader_length: f64,
    p: &LcmParams,
) -> f64 {
    let s_star = lcm_desired_spacing(v_follower, v_leader, leader_length, p).max(MIN_DESIRED_SPACING);
    p.max_accel * (1.0 - v_follower / p.v_desire - (1.0 - spacing / s_star).exp())
}

/// LCM acceleration for a follower/leader state pair. The returned value is
/// dated tau seconds after the input states; the engine applies the delay.
pub fn lcm_accel(follower: &VehicleState, leader: &VehicleState, p: &LcmParams) -> Result<f64> {
    let spacing = leader.x - follower.x;
    if spacing <= 0.0 {
        return Err(Error::CarFollowingCollision {
            follower: follower.id,
            leader: leader.id,
            gap: spacing,
        });
    }
    Ok(lcm_accel_raw(follower.v, leader.v, spacing, leader.length, p))
}

/// Exact time derivative of the LCM acceleration (chain rule on the model,
/// not the printed shorthand), evaluated at the same state as `lcm_accel`.
pub fn lcm_jerk_raw(
    v_follower: f64,
    v_leader: f64,
    a_follower: f64,
    a_leader: f64,
    spacing: f64,
    leader_length: f64,
    p: &LcmParams,
) -> f64 {
    let s_star = lcm_desired_spacing(v_follower, v_leader, leader_length, p);
    if s_star <= MIN_DESIRED_SPACING {
        // Interaction term clamped flat; only the free-flow part moves.
        return p.max_accel * (-a_follower / p.v_desire);
    }
    let s_star_dot = v_follower * a_follower / p.emergency_decel
        - v_leader * a_leader / p.leader_decel_estimate
        + a_follower * p.reaction_time;
    let spacing_dot = v_leader - v_follower;
    let exp_term = (1.0 - spacing / s_star).exp();
    p.max_accel
        * (-a_follower / p.v_desire
            + exp_term * (spacing_dot * s_star - spacing * s_star_dot) / (s_star * s_star))
}

pub fn lcm_jerk(follower: &VehicleState, leader: &VehicleState, p: &LcmParams) -> f64 {
    lcm_jerk_raw(
        follower.v,
        leader.v,
        follower.a,
        leader.a,
        leader.x - follower.x,
        leader.length,
        p,
    )
}

/// IDM desired gap. `closing_speed` is v_follower - v_leader.
fn idm_desired_gap(v_follower: f64, closing_speed: f64, p: &IdmParams) -> f64 {
    let dynamic = v_follower * closing_speed
        / (2.0 * (p.max_accel * p.comfortable_decel).sqrt());
    (p.s_jam + p.s1 * (v_follower / p.v_desire).sqrt() + v_follower * p.headway + dynamic).max(0.0)
}

/// IDM acceleration from scalar state. `net_gap` is spacing minus leader length.
pub fn idm_accel_raw(v_follower: f64, closing_speed: f64, net_gap: f64, p: &IdmParams) -> f64 {
    let s_star = idm_desired_gap(v_follower, closing_speed, p);
    p.max_accel
        * (1.0 - (v_follower / p.v_desire).powf(p.delta) - (s_star / net_gap).powi(2))
}

/// IDM acceleration for a follower/leader state pair.
pub fn idm_accel(follower: &VehicleState, leader: &VehicleState, p: &IdmParams) -> Result<f64> {
    let net_gap = leader.x - follower.x - leader.length;
    if net_gap <= 0.0 {
        return Err(Error::CarFollowingCollision {
            follower: follower.id,
            leader: leader.id,
            gap: net_gap,
        });
    }
    Ok(idm_accel_raw(follower.v, follower.v - leader.v, net_gap, p))
}

/// Exact time derivative of the IDM acceleration.
pub fn idm_jerk_raw(
    v_follower: f64,
    v_leader: f64,
    a_follower: f64,
    a_leader: f64,
    net_gap: f64,
    p: &IdmParams,
) -> f64 {
    let closing = v_follower - v_leader;
    let s_star = idm_desired_gap(v_follower, closing, p);
    let free_flow = if v_follower > 0.0 {
        -p.delta * (v_follower / p.v_desire).powf(p.delta - 1.0) * a_follower / p.v_desire
    } else {
        0.0
    };
    if s_star <= 0.0 {
        // Clamped desired gap; interaction term is flat at zero.
        return p.max_accel * free_flow;
    }
    let s1_dot = if p.s1 > 0.0 && v_follower > 0.0 {
        p.s1 * a_follower / (2.0 * (v_follower * p.v_desire).sqrt())
    } else {
        0.0
    };
    let s_star_dot = s1_dot
        + a_follower * p.headway
        + (a_follower * closing + v_follower * (a_follower - a_leader))
            / (2.0 * (p.max_accel * p.comfortable_decel).sqrt());
    let gap_dot = -closing;
    let interaction =
        -2.0 * (s_star / net_gap) * (s_star_dot * net_gap - s_star * gap_dot) / (net_gap * net_gap);
    p.max_accel * (free_flow + interaction)
}

pub fn idm_jerk(follower: &VehicleState, leader: &VehicleState, p: &IdmParams) -> f64 {
    idm_jerk_raw(
        follower.v,
        leader.v,
        follower.a,
        leader.a,
        leader.x - follower.x - leader.length,
        p,
    )
}

/// Gross equilibrium spacing (center-to-center) of the IDM at speed `v`.
///
/// At equilibrium the dynamic term vanishes (zero closing speed) and the
/// acceleration balance gives
/// `net gap = (s_jam + s1*sqrt(v/v_d) + v*T) / sqrt(1 - (v/v_d)^delta)`.
pub fn idm_equilibrium_spacing(v: f64, p: &IdmParams, leader_length: f64) -> Result<f64> {
    if v < 0.0 || v >= p.v_desire {
        return Err(Error::NoEquilibrium {
            speed: v,
            v_desire: p.v_desire,
        });
    }
    let static_gap = p.s_jam + p.s1 * (v / p.v_desire).sqrt() + v * p.headway;
    let net = static_gap / (1.0 - (v / p.v_desire).powf(p.delta)).sqrt();
    Ok(net + leader_length)
}

/// Gross equilibrium spacing of the LCM at speed `v`.
///
/// Setting the acceleration to zero gives `exp(1 - s/s*) = 1 - v/v_d`, hence
/// `s = s* * (1 - ln(1 - v/v_d))`.
pub fn lcm_equilibrium_spacing(v: f64, p: &LcmParams, leader_length: f64) -> Result<f64> {
    if v < 0.0 || v >= p.v_desire {
        return Err(Error::NoEquilibrium {
            speed: v,
            v_desire: p.v_desire,
        });
    }
    let s_star = lcm_desired_spacing(v, v, leader_length, p);
    Ok(s_star * (1.0 - (1.0 - v / p.v_desire).ln()))
}
