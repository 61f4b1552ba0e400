//! Kinematic vehicle model, its linearized error dynamics about a reference
//! trajectory, and a receding-horizon tracker for the planned quintic path.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{sample_trajectory, QuinticPair, TrajectorySample};

/// Rear-axle kinematic bicycle state with its current control input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    /// Yaw, rad.
    pub phi: f64,
    /// Rear-axle speed, m/s.
    pub v_r: f64,
    /// Front steering angle, rad.
    pub delta: f64,
    /// Wheelbase, m.
    pub wheelbase: f64,
}

/// Reference point for linearization: pose plus the nominal control that
/// keeps the vehicle on the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub v: f64,
    pub delta: f64,
}

impl ReferencePoint {
    /// Nominal pose and control implied by a planned trajectory sample.
    pub fn from_sample(s: &TrajectorySample, wheelbase: f64) -> Self {
        let v = (s.vx * s.vx + s.vy * s.vy).sqrt();
        let phi = s.vy.atan2(s.vx);
        // yaw rate = (vx*ay - vy*ax) / v^2; tan(delta) = wheelbase * yaw_rate / v.
        let delta = if v > 1e-9 {
            let yaw_rate = (s.vx * s.ay - s.vy * s.ax) / (v * v);
            (wheelbase * yaw_rate / v).atan()
        } else {
            0.0
        };
        ReferencePoint {
            x: s.x,
            y: s.y,
            phi,
            v,
            delta,
        }
    }
}

/// First-order discrete error dynamics about a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    pub a: Matrix3<f64>,
    pub b: Matrix3x2<f64>,
    pub reference: ReferencePoint,
    pub sampling_time: f64,
}

/// Receding-horizon controller configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Prediction horizon, ticks.
    pub n_p: usize,
    /// Control horizon, ticks (<= n_p).
    pub n_c: usize,
    /// Diagonal of the state-error weight matrix.
    pub q_diag: [f64; 3],
    /// Diagonal of the input-increment weight matrix.
    pub r_diag: [f64; 2],
    /// Relaxation weight.
    pub rho: f64,
    /// Per-tick bound on the speed increment, m/s.
    pub dv_bound: f64,
    /// Per-tick bound on the steering increment, rad.
    pub ddelta_bound: f64,
    /// Wheelbase of the controlled vehicle, m.
    pub wheelbase: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            n_p: 20,
            n_c: 5,
            q_diag: [10.0, 10.0, 1.0],
            r_diag: [0.1, 0.1],
            rho: 100.0,
            dv_bound: 1.0,
            ddelta_bound: 0.1,
            wheelbase: 2.7,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_c == 0 || self.n_c > self.n_p {
            return Err(Error::config(
                "mpc.n_c",
                format!("control horizon must satisfy 1 <= n_c <= n_p, got {} / {}", self.n_c, self.n_p),
            ));
        }
        if self.q_diag.iter().chain(self.r_diag.iter()).any(|w| *w < 0.0) || self.rho < 0.0 {
            return Err(Error::config("mpc", "weights must be non-negative"));
        }
        if !(self.wheelbase > 0.0) {
            return Err(Error::config("mpc.wheelbase", "must be > 0"));
        }
        Ok(())
    }
}

/// Forward-integrate the kinematic bicycle over `dt` (classic RK4 with the
/// control held constant).
pub fn step_kinematics(s: &KinematicState, dt: f64) -> Result<KinematicState> {
    assert!(dt > 0.0);
    if s.delta.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::SteeringOutOfRange(s.delta));
    }
    let yaw_rate = s.v_r * s.delta.tan() / s.wheelbase;
    let deriv = |phi: f64| (s.v_r * phi.cos(), s.v_r * phi.sin(), yaw_rate);
    let (k1x, k1y, k1p) = deriv(s.phi);
    let (k2x, k2y, k2p) = deriv(s.phi + 0.5 * dt * k1p);
    let (k3x, k3y, k3p) = deriv(s.phi + 0.5 * dt * k2p);
    let (k4x, k4y, k4p) = deriv(s.phi + dt * k3p);
    Ok(KinematicState {
        x: s.x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        y: s.y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
        phi: s.phi + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
        ..*s
    })
}

/// Discrete error-model matrices about a reference point.
pub fn linearize_error_model(
    reference: ReferencePoint,
    wheelbase: f64,
    sampling_time: f64,
) -> Result<ErrorModel> {
    if reference.delta.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::SteeringOutOfRange(reference.delta));
    }
    let t = sampling_time;
    let (sin_phi, cos_phi) = reference.phi.sin_cos();
    let a = Matrix3::new(
        1.0, 0.0, -reference.v * sin_phi * t,
        0.0, 1.0, reference.v * cos_phi * t,
        0.0, 0.0, 1.0,
    );
    let cos_delta = reference.delta.cos();
    let b = Matrix3x2::new(
        cos_phi * t, 0.0,
        sin_phi * t, 0.0,
        reference.delta.tan() * t / wheelbase, reference.v * t / (wheelbase * cos_delta * cos_delta),
    );
    Ok(ErrorModel {
        a,
        b,
        reference,
        sampling_time,
    })
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Condensed quadratic in the stacked input increments: cost matrices
/// (h, g) such that the objective is du' h du + 2 g' du + const.
fn condense(
    e0: Vector3<f64>,
    u_prev: nalgebra::Vector2<f64>,
    models: &[ErrorModel],
    cfg: &MpcConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let n_c = cfg.n_c;
    let q = Matrix3::from_diagonal(&Vector3::new(cfg.q_diag[0], cfg.q_diag[1], cfg.q_diag[2]));
    let r = Matrix2::from_diagonal(&nalgebra::Vector2::new(cfg.r_diag[0], cfg.r_diag[1]));
    let mut h = DMatrix::zeros(2 * n_c, 2 * n_c);
    let mut g = DVector::zeros(2 * n_c);
    for k in 0..n_c {
        h.view_mut((2 * k, 2 * k), (2, 2)).copy_from(&r);
    }
    // Forward recursion of the nominal error and its sensitivity to du,
    // in dynamic matrices throughout so the shapes stay uniform.
    let q_dyn = DMatrix::<f64>::from_iterator(3, 3, q.iter().copied());
    let mut c = DVector::from_column_slice(e0.as_slice());
    let mut s = DMatrix::<f64>::zeros(3, 2 * n_c);
    for (k, model) in models.iter().enumerate() {
        let a_dyn = DMatrix::<f64>::from_iterator(3, 3, model.a.iter().copied());
        let b_dyn = DMatrix::<f64>::from_iterator(3, 2, model.b.iter().copied());
        // u_k depends on du_0 .. du_min(k, n_c - 1).
        let blocks = (k + 1).min(n_c);
        let mut s_next = &a_dyn * &s;
        for j in 0..blocks {
            let updated = s_next.view((0, 2 * j), (3, 2)).clone_owned() + &b_dyn;
            s_next.view_mut((0, 2 * j), (3, 2)).copy_from(&updated);
        }
        let c_next = &a_dyn * &c + &b_dyn * DVector::from_column_slice(u_prev.as_slice());
        // Accumulate this step's cost contribution.
        h += s_next.transpose() * &q_dyn * &s_next;
        g += s_next.transpose() * &q_dyn * &c_next;
        s = s_next;
        c = c_next;
    }
    (h, g)
}

/// One receding-horizon step.
///
/// Minimizes the quadratic tracking objective (state error over the
/// prediction horizon, input increments over the control horizon, plus the
/// relaxation term) built on the linearized error model, clamps the
/// increments to their box bounds, and returns the first increment of the
/// optimal sequence together with the bound relaxation actually needed.
pub fn mpc_step(
    current: &KinematicState,
    reference_window: &[TrajectorySample],
    cfg: &MpcConfig,
) -> Result<((f64, f64), f64)> {
    if reference_window.len() < cfg.n_p {
        return Err(Error::ReferenceWindowTooShort {
            have: reference_window.len(),
            need: cfg.n_p,
        });
    }
    let refs: Vec<ReferencePoint> = reference_window[..cfg.n_p]
        .iter()
        .map(|s| ReferencePoint::from_sample(s, current.wheelbase))
        .collect();
    let models: Vec<ErrorModel> = refs
        .iter()
        .map(|r| linearize_error_model(*r, current.wheelbase, reference_window.get(1).map_or(0.1, |s| s.t - reference_window[0].t)))
        .collect::<Result<_>>()?;
    let e0 = Vector3::new(
        current.x - refs[0].x,
        current.y - refs[0].y,
        wrap_angle(current.phi - refs[0].phi),
    );
    let u_prev = nalgebra::Vector2::new(current.v_r - refs[0].v, current.delta - refs[0].delta);
    let (h, g) = condense(e0, u_prev, &models, cfg);

    let n = 2 * cfg.n_c;
    let bounds: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { cfg.dv_bound } else { cfg.ddelta_bound })
        .collect();

    let solve_free = |clamped: &[Option<f64>]| -> Option<DVector<f64>> {
        let free: Vec<usize> = (0..n).filter(|i| clamped[*i].is_none()).collect();
        let mut x = DVector::zeros(n);
        for (i, c) in clamped.iter().enumerate() {
            if let Some(v) = c {
                x[i] = *v;
            }
        }
        if free.is_empty() {
            return Some(x);
        }
        let mut h_ff = DMatrix::zeros(free.len(), free.len());
        let mut rhs = DVector::zeros(free.len());
        for (a, &i) in free.iter().enumerate() {
            rhs[a] = -g[i];
            for (j, c) in clamped.iter().enumerate() {
                if let Some(v) = c {
                    rhs[a] -= h[(i, j)] * v;
                }
            }
            for (b, &j) in free.iter().enumerate() {
                h_ff[(a, b)] = h[(i, j)];
            }
        }
        let sol = h_ff.lu().solve(&rhs)?;
        for (a, &i) in free.iter().enumerate() {
            x[i] = sol[a];
        }
        Some(x)
    };

    let mut clamped: Vec<Option<f64>> = vec![None; n];
    let mut du = solve_free(&clamped).unwrap_or_else(|| DVector::zeros(n));
    let unconstrained = du.clone();
    for _ in 0..20 {
        let mut changed = false;
        for i in 0..n {
            if clamped[i].is_none() && du[i].abs() > bounds[i] {
                clamped[i] = Some(du[i].signum() * bounds[i]);
                changed = true;
            }
        }
        if !changed {
            break;
        }
        du = match solve_free(&clamped) {
            Some(x) => x,
            None => break,
        };
    }
    // Final safety clamp for components the resolve pushed back out.
    for i in 0..n {
        du[i] = du[i].clamp(-bounds[i], bounds[i]);
    }
    let epsilon = (0..n)
        .map(|i| (unconstrained[i].abs() - bounds[i]).max(0.0))
        .fold(0.0f64, f64::max);
    Ok(((du[0], du[1]), epsilon))
}

/// One tick of a closed-loop rollout.
#[derive(Debug, Clone, Copy)]
pub struct TrackedTick {
    pub t: f64,
    pub state: KinematicState,
    pub position_error: f64,
    pub lateral_error: f64,
}

/// Result of tracking a full plan.
#[derive(Debug, Clone)]
pub struct TrackingResult {
    pub ticks: Vec<TrackedTick>,
    pub rms_position_error: f64,
    pub rms_lateral_error: f64,
}

const DIVERGENCE_LIMIT: f64 = 5.0;

/// Closed-loop rollout of the MPC controller along a planned trajectory,
/// starting exactly on the plan.
pub fn track_trajectory(plan: &QuinticPair, cfg: &MpcConfig, dt: f64) -> Result<TrackingResult> {
    cfg.validate()?;
    let samples = sample_trajectory(plan, dt);
    let first_ref = ReferencePoint::from_sample(&samples[0], cfg.wheelbase);
    let mut state = KinematicState {
        x: first_ref.x,
        y: first_ref.y,
        phi: first_ref.phi,
        v_r: first_ref.v,
        delta: first_ref.delta,
        wheelbase: cfg.wheelbase,
    };
    let mut ticks = vec![TrackedTick {
        t: samples[0].t,
        state,
        position_error: 0.0,
        lateral_error: 0.0,
    }];
    let mut sq_pos = 0.0;
    let mut sq_lat = 0.0;
    for k in 0..samples.len() - 1 {
        // Pad the window by repeating the final sample past t_end.
        let mut window: Vec<TrajectorySample> = Vec::with_capacity(cfg.n_p);
        for i in 0..cfg.n_p {
            let idx = (k + i).min(samples.len() - 1);
            window.push(samples[idx]);
        }
        let ((dv, ddelta), _eps) = mpc_step(&state, &window, cfg)?;
        let here = ReferencePoint::from_sample(&samples[k], cfg.wheelbase);
        let next_ref = ReferencePoint::from_sample(&samples[k + 1], cfg.wheelbase);
        // Deviation input carried between ticks; absolute control follows the
        // reference feed-forward.
        let u_dev_v = state.v_r - here.v + dv;
        let u_dev_delta = state.delta - here.delta + ddelta;
        state.v_r = next_ref.v + u_dev_v;
        state.delta = (next_ref.delta + u_dev_delta)
            .clamp(-std::f64::consts::FRAC_PI_2 + 1e-3, std::f64::consts::FRAC_PI_2 - 1e-3);
        state = step_kinematics(&state, dt)?;
        let target = &samples[k + 1];
        let pos_err = ((state.x - target.x).powi(2) + (state.y - target.y).powi(2)).sqrt();
        let lat_err = (state.y - target.y).abs();
        if pos_err > DIVERGENCE_LIMIT {
            return Err(Error::TrackingDiverged {
                t: target.t,
                error: pos_err,
            });
        }
        sq_pos += pos_err * pos_err;
        sq_lat += lat_err * lat_err;
        ticks.push(TrackedTick {
            t: target.t,
            state,
            position_error: pos_err,
            lateral_error: lat_err,
        });
    }
    let n = (ticks.len() - 1).max(1) as f64;
    Ok(TrackingResult {
        ticks,
        rms_position_error: (sq_pos / n).sqrt(),
        rms_lateral_error: (sq_lat / n).sqrt(),
    })
}
