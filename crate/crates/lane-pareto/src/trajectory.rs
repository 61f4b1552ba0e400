//! Stage-2 lane-change path planning: time-parameterized quintic polynomials
//! in both axes, sampling, and kinematic feasibility scoring.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::KinematicBounds;

/// Quintic coefficient pairs for the longitudinal (`a`) and lateral (`b`)
/// axes. Coefficients are in maneuver-local time `tau = t - t_start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuinticPair {
    pub a: [f64; 6],
    pub b: [f64; 6],
    pub t_start: f64,
    pub t_end: f64,
}

/// One sampled point of a planned trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
    pub jx: f64,
    pub jy: f64,
    pub theta: f64,
}

/// Boundary state at the start of the maneuver.
#[derive(Debug, Clone, Copy)]
pub struct StartState {
    pub x: f64,
    pub v: f64,
    pub a: f64,
    pub t: f64,
}

/// Decided boundary state at the end of the maneuver.
#[derive(Debug, Clone, Copy)]
pub struct EndState {
    /// Longitudinal displacement x_end - x_start, m.
    pub x_disp: f64,
    pub v: f64,
    pub a: f64,
}

fn quintic_row(tau: f64, derivative: usize) -> [f64; 6] {
    let mut row = [0.0; 6];
    for (k, slot) in row.iter_mut().enumerate() {
        if k < derivative {
            continue;
        }
        let mut coeff = 1.0;
        for j in 0..derivative {
            coeff *= (k - j) as f64;
        }
        *slot = coeff * tau.powi((k - derivative) as i32);
    }
    row
}

fn eval_poly(c: &[f64; 6], tau: f64, derivative: usize) -> f64 {
    quintic_row(tau, derivative)
        .iter()
        .zip(c.iter())
        .map(|(r, c)| r * c)
        .sum()
}

/// Solve the two independent 6x6 boundary systems for a lane-change maneuver
/// of the given duration over a lane of width `lane_width`.
pub fn solve_quintic(
    start: StartState,
    end: EndState,
    duration: f64,
    lane_width: f64,
) -> Result<QuinticPair> {
    if !(duration > 0.0) || !(lane_width > 0.0) {
        return Err(Error::SingularQuintic { duration });
    }
    // Rows: position/speed/acceleration at tau = 0 and tau = duration.
    let mut m = Matrix6::zeros();
    for (i, (tau, d)) in [
        (0.0, 0),
        (0.0, 1),
        (0.0, 2),
        (duration, 0),
        (duration, 1),
        (duration, 2),
    ]
    .iter()
    .enumerate()
    {
        let row = quintic_row(*tau, *d);
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    let lu = m.lu();
    let rhs_x = Vector6::new(start.x, start.v, start.a, start.x + end.x_disp, end.v, end.a);
    let rhs_y = Vector6::new(0.0, 0.0, 0.0, lane_width, 0.0, 0.0);
    let sol_x = lu.solve(&rhs_x).ok_or(Error::SingularQuintic { duration })?;
    let sol_y = lu.solve(&rhs_y).ok_or(Error::SingularQuintic { duration })?;
    let mut a = [0.0; 6];
    let mut b = [0.0; 6];
    for i in 0..6 {
        a[i] = sol_x[i];
        b[i] = sol_y[i];
    }
    Ok(QuinticPair {
        a,
        b,
        t_start: start.t,
        t_end: start.t + duration,
    })
}

impl QuinticPair {
    /// Evaluate the trajectory at absolute time `t` (exact derivatives).
    pub fn sample_at(&self, t: f64) -> TrajectorySample {
        let tau = t - self.t_start;
        let x = eval_poly(&self.a, tau, 0);
        let y = eval_poly(&self.b, tau, 0);
        let vx = eval_poly(&self.a, tau, 1);
        let vy = eval_poly(&self.b, tau, 1);
        let ax = eval_poly(&self.a, tau, 2);
        let ay = eval_poly(&self.b, tau, 2);
        let jx = eval_poly(&self.a, tau, 3);
        let jy = eval_poly(&self.b, tau, 3);
        let theta = if vx != 0.0 { vy.atan2(vx) } else { 0.0 };
        TrajectorySample {
            t,
            x,
            y,
            vx,
            vy,
            ax,
            ay,
            jx,
            jy,
            theta,
        }
    }

    /// Largest boundary-condition residual across both axes, in native units.
    pub fn boundary_residual(&self, start: StartState, end: EndState, lane_width: f64) -> f64 {
        let s0 = self.sample_at(self.t_start);
        let s1 = self.sample_at(self.t_end);
        [
            s0.x - start.x,
            s0.vx - start.v,
            s0.ax - start.a,
            s1.x - (start.x + end.x_disp),
            s1.vx - end.v,
            s1.ax - end.a,
            s0.y,
            s0.vy,
            s0.ay,
            s1.y - lane_width,
            s1.vy,
            s1.ay,
        ]
        .iter()
        .fold(0.0f64, |m, r| m.max(r.abs()))
    }
}

/// Sample the trajectory at `dt` intervals from t_start to t_end. The final
/// sample at t_end is always included.
pub fn sample_trajectory(q: &QuinticPair, dt: f64) -> Vec<TrajectorySample> {
    assert!(dt > 0.0, "sample step must be positive");
    let span = q.t_end - q.t_start;
    let n = (span / dt).floor() as usize;
    let mut samples = Vec::with_capacity(n + 2);
    for i in 0..=n {
        samples.push(q.sample_at(q.t_start + i as f64 * dt));
    }
    if (span - n as f64 * dt).abs() > 1e-9 {
        samples.push(q.sample_at(q.t_end));
    }
    samples
}

fn excess_above(value: f64, max: f64) -> f64 {
    if value > max {
        (value - max) / max.abs().max(1e-9)
    } else {
        0.0
    }
}

fn excess_below(value: f64, min: f64) -> f64 {
    if value < min {
        (min - value) / min.abs().max(1e-9)
    } else {
        0.0
    }
}

/// Normalized constraint excess of a sampled maneuver against the configured
/// kinematic box bounds. Returns 0 for a feasible trajectory.
///
/// Per constraint the worst excess over all samples is taken, divided by the
/// magnitude of the violated bound, and the per-constraint terms are summed.
/// A non-monotone lateral profile also counts as a violation.
pub fn check_kinematic_limits(samples: &[TrajectorySample], bounds: &KinematicBounds) -> f64 {
    assert!(!samples.is_empty(), "empty sample list");
    let mut speed_hi = 0.0f64;
    let mut speed_lo = 0.0f64;
    let mut accel_hi = 0.0f64;
    let mut accel_lo = 0.0f64;
    let mut jerk_hi = 0.0f64;
    let mut jerk_lo = 0.0f64;
    let mut lateral_backtrack = 0.0f64;
    let mut prev_y = samples[0].y;
    for s in samples {
        let speed = (s.vx * s.vx + s.vy * s.vy).sqrt();
        speed_hi = speed_hi.max(excess_above(speed, bounds.v_max));
        speed_lo = speed_lo.max(excess_below(speed, bounds.v_min));
        for a in [s.ax, s.ay] {
            accel_hi = accel_hi.max(excess_above(a, bounds.a_max));
            accel_lo = accel_lo.max(excess_below(a, bounds.a_min));
        }
        for j in [s.jx, s.jy] {
            jerk_hi = jerk_hi.max(excess_above(j, bounds.j_max));
            jerk_lo = jerk_lo.max(excess_below(j, bounds.j_min));
        }
        if s.y < prev_y - 1e-9 {
            lateral_backtrack = lateral_backtrack.max((prev_y - s.y) / 1.0);
        }
        prev_y = prev_y.max(s.y);
    }
    let duration = samples.last().unwrap().t - samples[0].t;
    let x_disp = samples.last().unwrap().x - samples[0].x;
    speed_hi
        + speed_lo
        + accel_hi
        + accel_lo
        + jerk_hi
        + jerk_lo
        + lateral_backtrack
        + excess_above(duration, bounds.t_lc_max)
        + excess_below(duration, bounds.t_lc_min)
        + excess_above(x_disp, bounds.x_lc_max)
        + excess_below(x_disp, bounds.x_lc_min)
}
