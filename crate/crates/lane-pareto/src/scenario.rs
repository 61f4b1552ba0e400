//! Experiment configuration, platoon generation, and the warm-up simulation
//! that brings the target-lane queue to a steady car-following state.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cf_models::{
    idm_accel, idm_equilibrium_spacing, lcm_accel, lcm_equilibrium_spacing, IdmParams, LcmParams,
};
use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::nsga2::NsgaParams;
use crate::tracking::MpcConfig;

/// Driver/automation type of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleKind {
    /// Human-driven vehicle (delayed longitudinal control model).
    Hv,
    /// Autonomous vehicle (IDM, no reaction delay).
    Av,
    /// The autonomous vehicle executing the lane change.
    AvLc,
}

/// Lane membership. The original-lane centerline is y = 0, the target-lane
/// centerline is y = lane_width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lane {
    Original,
    Target,
    /// Strictly between the two centerlines (only the lane-changer).
    Transition,
}

/// Full kinematic state of one vehicle at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub kind: VehicleKind,
    /// Longitudinal position, m.
    pub x: f64,
    /// Lateral position, m.
    pub y: f64,
    /// Speed, m/s.
    pub v: f64,
    /// Acceleration, m/s^2.
    pub a: f64,
    /// Jerk, m/s^3.
    pub jerk: f64,
    /// Heading, rad.
    pub heading: f64,
    pub lane: Lane,
    /// Body length, m.
    pub length: f64,
    /// Body width, m.
    pub width: f64,
}

/// Lane for a given lateral position of the lane-changer.
pub fn lane_for_lateral(y: f64, lane_width: f64) -> Lane {
    if y <= 0.0 {
        Lane::Original
    } else if y >= lane_width {
        Lane::Target
    } else {
        Lane::Transition
    }
}

/// Box limits on the maneuver: speed, acceleration, jerk along the plan,
/// plus decision-variable brackets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub j_min: f64,
    pub j_max: f64,
    /// Maneuver duration bracket, s.
    pub t_lc_min: f64,
    pub t_lc_max: f64,
    /// Longitudinal displacement bracket, m.
    pub x_lc_min: f64,
    pub x_lc_max: f64,
    /// Wait-before-steering bracket, s.
    pub t_wait_min: f64,
    pub t_wait_max: f64,
    /// End-speed bracket, m/s.
    pub v_end_min: f64,
    pub v_end_max: f64,
    /// End-acceleration bracket, m/s^2.
    pub a_end_min: f64,
    pub a_end_max: f64,
}

impl Default for KinematicBounds {
    fn default() -> Self {
        KinematicBounds {
            v_min: 5.0,
            v_max: 30.0,
            a_min: -8.0,
            a_max: 8.0,
            j_min: -8.0,
            j_max: 8.0,
            t_lc_min: 1.0,
            t_lc_max: 16.0,
            x_lc_min: 5.0,
            x_lc_max: 480.0,
            t_wait_min: 0.0,
            t_wait_max: 10.0,
            v_end_min: 5.0,
            v_end_max: 30.0,
            a_end_min: -2.0,
            a_end_max: 2.0,
        }
    }
}

impl KinematicBounds {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("bounds.v_min/v_max", self.v_min, self.v_max),
            ("bounds.a_min/a_max", self.a_min, self.a_max),
            ("bounds.j_min/j_max", self.j_min, self.j_max),
            ("bounds.t_lc_min/t_lc_max", self.t_lc_min, self.t_lc_max),
            ("bounds.x_lc_min/x_lc_max", self.x_lc_min, self.x_lc_max),
            ("bounds.t_wait_min/t_wait_max", self.t_wait_min, self.t_wait_max),
            ("bounds.v_end_min/v_end_max", self.v_end_min, self.v_end_max),
            ("bounds.a_end_min/a_end_max", self.a_end_min, self.a_end_max),
        ];
        for (name, lo, hi) in pairs {
            if !(lo <= hi) {
                return Err(Error::config(name, format!("min {lo} > max {hi}")));
            }
        }
        if !(self.t_lc_min > 0.0) {
            return Err(Error::config("bounds.t_lc_min", "must be > 0"));
        }
        if self.t_wait_min < 0.0 {
            return Err(Error::config("bounds.t_wait_min", "must be >= 0"));
        }
        Ok(())
    }
}

/// How automation levels are assigned along the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvPattern {
    /// Deterministic spread: vehicle i is an AV iff
    /// ceil((i+1)p) > ceil(ip), which alternates at p = 0.5.
    Alternating,
    /// Independent Bernoulli draws from the given seed.
    Random(u64),
}

/// Space-time measurement rectangle size (anchored by the caller).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdieRegionSpec {
    /// Rectangle length along the road, m.
    pub length: f64,
    /// Rectangle duration, s.
    pub duration: f64,
}

impl Default for EdieRegionSpec {
    fn default() -> Self {
        EdieRegionSpec {
            length: 500.0,
            duration: 15.0,
        }
    }
}

/// Complete experiment description. All fields have defaults, so an empty
/// document yields the baseline scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Simulation step, s.
    pub sim_step: f64,
    /// Maximum warm-up time before giving up, s.
    pub warmup_duration: f64,
    /// Number of vehicles in the target-lane queue (including its head).
    pub platoon_size: usize,
    /// Fraction of AVs in the queue, [0, 1].
    pub penetration_ratio: f64,
    pub av_pattern: AvPattern,
    /// Steady speed of the target-lane queue head, m/s. Must stay below both
    /// models' desired speed or no equilibrium spacing exists.
    pub platoon_speed: f64,
    /// Lane-changer speed at the decision point, m/s.
    pub lc_initial_speed: f64,
    /// Gap from the lane-changer to its insertion leader at the decision
    /// point, m (center to center).
    pub lc_initial_gap: f64,
    /// Lateral distance between lane centerlines, m.
    pub lane_width: f64,
    /// Distance from the lane-changer to the stopped vehicle blocking the
    /// original lane, m.
    pub incident_distance: f64,
    /// Body length of every vehicle, m.
    pub vehicle_length: f64,
    /// Body width of every vehicle, m.
    pub vehicle_width: f64,
    /// Collision-boundary semi-major radius, m.
    pub ellipse_a: f64,
    /// Collision-boundary semi-minor radius, m.
    pub ellipse_b: f64,
    /// Trace window before the decision point, s.
    pub lead_in: f64,
    /// Trace window after the maneuver end, s.
    pub tail: f64,
    /// Followers re-target the lane-changer when it crosses the lane
    /// boundary instead of at steering onset.
    pub retarget_on_lane_entry: bool,
    pub cost_weights: CostWeights,
    pub bounds: KinematicBounds,
    pub lcm_params: LcmParams,
    pub idm_params: IdmParams,
    pub nsga_params: NsgaParams,
    pub mpc: MpcConfig,
    pub edie_region: EdieRegionSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            sim_step: 0.1,
            warmup_duration: 300.0,
            platoon_size: 20,
            penetration_ratio: 0.5,
            av_pattern: AvPattern::Alternating,
            platoon_speed: 22.0,
            lc_initial_speed: 20.0,
            lc_initial_gap: 20.0,
            lane_width: 3.5,
            incident_distance: 100.0,
            vehicle_length: 5.0,
            vehicle_width: 2.0,
            ellipse_a: 2.5,
            ellipse_b: 1.0,
            lead_in: 5.0,
            tail: 10.0,
            retarget_on_lane_entry: false,
            cost_weights: CostWeights::default(),
            bounds: KinematicBounds::default(),
            lcm_params: LcmParams::default(),
            idm_params: IdmParams::default(),
            nsga_params: NsgaParams::default(),
            mpc: MpcConfig::default(),
            edie_region: EdieRegionSpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sim_step", self.sim_step),
            ("warmup_duration", self.warmup_duration),
            ("platoon_speed", self.platoon_speed),
            ("lc_initial_speed", self.lc_initial_speed),
            ("lc_initial_gap", self.lc_initial_gap),
            ("lane_width", self.lane_width),
            ("incident_distance", self.incident_distance),
            ("vehicle_length", self.vehicle_length),
            ("vehicle_width", self.vehicle_width),
            ("ellipse_a", self.ellipse_a),
            ("ellipse_b", self.ellipse_b),
            ("edie_region.length", self.edie_region.length),
            ("edie_region.duration", self.edie_region.duration),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(name, format!("must be > 0, got {v}")));
            }
        }
        for (name, v) in [("lead_in", self.lead_in), ("tail", self.tail)] {
            if !(v >= 0.0) {
                return Err(Error::config(name, format!("must be >= 0, got {v}")));
            }
        }
        if self.platoon_size < 1 {
            return Err(Error::config("platoon_size", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.penetration_ratio) {
            return Err(Error::config(
                "penetration_ratio",
                format!("must be in [0, 1], got {}", self.penetration_ratio),
            ));
        }
        if self.platoon_speed >= self.lcm_params.v_desire
            || self.platoon_speed >= self.idm_params.v_desire
        {
            return Err(Error::config(
                "platoon_speed",
                format!(
                    "must be below both desired speeds ({}, {}) for a steady \
                     car-following state to exist, got {}",
                    self.lcm_params.v_desire, self.idm_params.v_desire, self.platoon_speed
                ),
            ));
        }
        self.cost_weights.validate()?;
        self.bounds.validate()?;
        self.lcm_params.validate()?;
        self.idm_params.validate()?;
        self.nsga_params.validate()?;
        self.mpc.validate()?;
        Ok(())
    }

    /// Queue index of the vehicle the lane-changer inserts behind (mid-queue,
    /// so the reaction wave has room to propagate).
    pub fn insertion_leader_index(&self) -> usize {
        self.platoon_size / 2
    }

    /// Id of the lane-changer (queue ids come first).
    pub fn lc_id(&self) -> usize {
        self.platoon_size
    }

    /// Id of the stopped vehicle on the original lane.
    pub fn incident_id(&self) -> usize {
        self.platoon_size + 1
    }
}

/// Parse and validate a scenario document (TOML).
pub fn build_scenario(raw: &str) -> Result<ScenarioConfig> {
    let config: ScenarioConfig = toml::from_str(raw)
        .map_err(|e| Error::config("scenario", e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Kind of the i-th queue member (0 = head) at the given penetration ratio.
fn kind_at(i: usize, ratio: f64, pattern: AvPattern, random_draws: &[bool]) -> VehicleKind {
    let is_av = match pattern {
        AvPattern::Alternating => {
            ((i + 1) as f64 * ratio).ceil() > (i as f64 * ratio).ceil()
        }
        AvPattern::Random(_) => random_draws[i],
    };
    if is_av {
        VehicleKind::Av
    } else {
        VehicleKind::Hv
    }
}

/// Equilibrium center-to-center spacing of a follower of the given kind.
fn equilibrium_spacing(kind: VehicleKind, config: &ScenarioConfig) -> Result<f64> {
    match kind {
        VehicleKind::Hv => lcm_equilibrium_spacing(
            config.platoon_speed,
            &config.lcm_params,
            config.vehicle_length,
        ),
        _ => idm_equilibrium_spacing(
            config.platoon_speed,
            &config.idm_params,
            config.vehicle_length,
        ),
    }
}

/// Build the initial vehicle list: the target-lane queue at analytic
/// equilibrium spacing (front to rear), then the lane-changer on the
/// original lane, then the stopped incident vehicle ahead of it.
///
/// Coordinates are anchored so the lane-changer sits at x = 0 with its
/// insertion leader `lc_initial_gap` ahead.
pub fn spawn_platoon(config: &ScenarioConfig) -> Result<Vec<VehicleState>> {
    config.validate()?;
    let n = config.platoon_size;
    let random_draws: Vec<bool> = match config.av_pattern {
        AvPattern::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.gen_bool(config.penetration_ratio)).collect()
        }
        AvPattern::Alternating => Vec::new(),
    };

    let mut vehicles = Vec::with_capacity(n + 2);
    let mut x = 0.0;
    for i in 0..n {
        let kind = kind_at(i, config.penetration_ratio, config.av_pattern, &random_draws);
        if i > 0 {
            x -= equilibrium_spacing(kind, config)?;
        }
        vehicles.push(VehicleState {
            id: i,
            kind,
            x,
            y: config.lane_width,
            v: config.platoon_speed,
            a: 0.0,
            jerk: 0.0,
            heading: 0.0,
            lane: Lane::Target,
            length: config.vehicle_length,
            width: config.vehicle_width,
        });
    }

    // Anchor: insertion leader at lc_initial_gap, lane-changer at 0.
    let shift = config.lc_initial_gap - vehicles[config.insertion_leader_index()].x;
    for v in &mut vehicles {
        v.x += shift;
    }

    vehicles.push(VehicleState {
        id: config.lc_id(),
        kind: VehicleKind::AvLc,
        x: 0.0,
        y: 0.0,
        v: config.lc_initial_speed,
        a: 0.0,
        jerk: 0.0,
        heading: 0.0,
        lane: Lane::Original,
        length: config.vehicle_length,
        width: config.vehicle_width,
    });
    vehicles.push(VehicleState {
        id: config.incident_id(),
        kind: VehicleKind::Hv,
        x: config.incident_distance,
        y: 0.0,
        v: 0.0,
        a: 0.0,
        jerk: 0.0,
        heading: 0.0,
        lane: Lane::Original,
        length: config.vehicle_length,
        width: config.vehicle_width,
    });
    Ok(vehicles)
}

/// Per-follower longitudinal controller. Human drivers react with a delay:
/// the model output computed at t applies `round(tau/dt)` ticks later, so
/// pending commands sit in a FIFO primed with zeros (the equilibrium value).
#[derive(Debug, Clone)]
pub struct FollowerCtl {
    kind: VehicleKind,
    pending: VecDeque<f64>,
}

impl FollowerCtl {
    pub fn new(kind: VehicleKind, lcm: &LcmParams, dt: f64) -> Self {
        let pending = match kind {
            VehicleKind::Hv => {
                let ticks = (lcm.reaction_time / dt).round() as usize;
                VecDeque::from(vec![0.0; ticks])
            }
            _ => VecDeque::new(),
        };
        FollowerCtl { kind, pending }
    }

    /// Acceleration to apply this tick given the current follower/leader
    /// states.
    pub fn command(
        &mut self,
        follower: &VehicleState,
        leader: &VehicleState,
        lcm: &LcmParams,
        idm: &IdmParams,
    ) -> Result<f64> {
        match self.kind {
            VehicleKind::Hv => {
                let raw = lcm_accel(follower, leader, lcm)?;
                self.pending.push_back(raw);
                Ok(self.pending.pop_front().expect("delay queue never empty"))
            }
            _ => idm_accel(follower, leader, idm),
        }
    }
}

/// Advance one vehicle by one tick under the given applied acceleration.
/// Ballistic update with the speed clamped at zero.
pub fn integrate_vehicle(state: &mut VehicleState, accel: f64, dt: f64) {
    let v_new = (state.v + accel * dt).max(0.0);
    // Effective acceleration accounting for the clamp.
    let a_eff = (v_new - state.v) / dt;
    state.x += state.v * dt + 0.5 * a_eff * dt * dt;
    state.jerk = (a_eff - state.a) / dt;
    state.a = a_eff;
    state.v = v_new;
}

/// Worst steady-state residuals of the queue: (max |a|, max |v - v_head|).
fn queue_residuals(queue: &[VehicleState]) -> (f64, f64) {
    let head_speed = queue[0].v;
    let mut worst_a = 0.0f64;
    let mut worst_v = 0.0f64;
    for f in &queue[1..] {
        worst_a = worst_a.max(f.a.abs());
        worst_v = worst_v.max((f.v - head_speed).abs());
    }
    (worst_a, worst_v)
}

// Stricter than the reported steady-state guarantees (|a| <= 1e-3,
// |v - v_head| <= 1e-2): near the desired speed the equilibrium spacing is
// very sensitive to speed (~10 m per m/s), so converging only to the
// reported tolerances would leave spacings visibly off their analytic
// values.
const WARMUP_ACCEL_TOL: f64 = 1e-4;
const WARMUP_SPEED_TOL: f64 = 2e-3;

/// Run the target-lane queue to a steady car-following state.
///
/// The queue head holds its speed; followers run their models (with the
/// human reaction delay buffered). Convergence is checked before each step,
/// so an already-steady queue returns immediately. The returned state is
/// re-anchored so the lane-changer is at x = 0 with its insertion leader
/// `lc_initial_gap` ahead, and the incident vehicle `incident_distance`
/// ahead of the lane-changer — the geometry at the decision time.
pub fn run_warmup(platoon: &[VehicleState], config: &ScenarioConfig) -> Result<Vec<VehicleState>> {
    let dt = config.sim_step;
    let mut queue: Vec<VehicleState> =
        platoon.iter().filter(|v| v.lane == Lane::Target).copied().collect();
    let others: Vec<VehicleState> =
        platoon.iter().filter(|v| v.lane != Lane::Target).copied().collect();
    if queue.is_empty() {
        return Err(Error::config("platoon", "no target-lane vehicles to warm up"));
    }

    let mut controllers: Vec<FollowerCtl> = queue
        .iter()
        .skip(1)
        .map(|v| FollowerCtl::new(v.kind, &config.lcm_params, dt))
        .collect();

    let max_ticks = (config.warmup_duration / dt).ceil() as usize;
    let mut converged = false;
    for _ in 0..=max_ticks {
        let (worst_a, worst_v) = queue_residuals(&queue);
        if worst_a <= WARMUP_ACCEL_TOL && worst_v <= WARMUP_SPEED_TOL {
            converged = true;
            break;
        }
        // Synchronous update: all commands from the state at t.
        let snapshot = queue.clone();
        let mut accels = Vec::with_capacity(queue.len());
        accels.push(0.0); // head holds speed
        for i in 1..queue.len() {
            accels.push(controllers[i - 1].command(
                &snapshot[i],
                &snapshot[i - 1],
                &config.lcm_params,
                &config.idm_params,
            )?);
        }
        for (i, state) in queue.iter_mut().enumerate() {
            if i == 0 {
                state.x += state.v * dt;
                state.a = 0.0;
                state.jerk = 0.0;
            } else {
                integrate_vehicle(state, accels[i], dt);
            }
        }
        // Order preservation: any overtake is a modeling failure.
        for i in 1..queue.len() {
            if queue[i].x >= queue[i - 1].x {
                return Err(Error::CarFollowingCollision {
                    follower: queue[i].id,
                    leader: queue[i - 1].id,
                    gap: queue[i - 1].x - queue[i].x,
                });
            }
        }
    }
    if !converged {
        let (worst_a, worst_v) = queue_residuals(&queue);
        let (residual, what) = if worst_a / WARMUP_ACCEL_TOL >= worst_v / WARMUP_SPEED_TOL {
            (worst_a, "follower acceleration magnitude")
        } else {
            (worst_v, "follower speed deviation from the queue head")
        };
        return Err(Error::WarmupNotConverged {
            duration: config.warmup_duration,
            residual,
            what,
        });
    }

    // Re-anchor to the decision-time geometry.
    let shift = config.lc_initial_gap - queue[config.insertion_leader_index()].x;
    for v in &mut queue {
        v.x += shift;
    }
    let mut out = queue;
    for mut v in others {
        if v.kind == VehicleKind::AvLc {
            v.x = 0.0;
            v.v = config.lc_initial_speed;
            v.a = 0.0;
            v.jerk = 0.0;
        } else {
            v.x = config.incident_distance;
        }
        out.push(v);
    }
    Ok(out)
}
