//! Two-stage maneuver orchestration: gap search under car-following
//! (stage 1), lane-change execution along the planned curve (stage 2),
//! follower reactions, objective evaluation, and full trace replay.

use serde::{Deserialize, Serialize};

use crate::collision::clearance_over_horizon;
use crate::cost::{aggregate_jlc, aggregate_jtf, follower_weights, step_cost, CostBreakdown, TickCost};
use crate::error::{Error, Result};
use crate::nsga2::{self, EvolveOutcome, LcCandidate, ParetoFront};
use crate::scenario::{
    lane_for_lateral, FollowerCtl, integrate_vehicle, Lane, ScenarioConfig, VehicleKind,
    VehicleState,
};
use crate::tracking::track_trajectory;
use crate::trajectory::{
    check_kinematic_limits, sample_trajectory, solve_quintic, EndState, StartState,
    TrajectorySample,
};

/// How the lane-changer moves during stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Follow the planned curve exactly.
    Ideal,
    /// Closed-loop MPC tracking of the planned curve.
    Tracked,
}

/// All vehicle states at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub states: Vec<VehicleState>,
}

/// Full multi-vehicle trace of one maneuver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub dt: f64,
    /// Decision time.
    pub t0: f64,
    /// Steering onset.
    pub t_start: f64,
    /// Arrival at the target-lane centerline.
    pub t_end: f64,
    pub mode: SimMode,
    pub ticks: Vec<TickRecord>,
}

impl SimulationTrace {
    /// One row per vehicle per tick: t, vehicle_id, kind, lane, x, y, v, a, jerk.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,vehicle_id,kind,lane,x,y,v,a,jerk\n");
        for tick in &self.ticks {
            for s in &tick.states {
                let kind = match s.kind {
                    VehicleKind::Hv => "hv",
                    VehicleKind::Av => "av",
                    VehicleKind::AvLc => "av_lc",
                };
                let lane = match s.lane {
                    Lane::Original => "original",
                    Lane::Target => "target",
                    Lane::Transition => "transition",
                };
                out.push_str(&format!(
                    "{:.2},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    tick.t, s.id, kind, lane, s.x, s.y, s.v, s.a, s.jerk
                ));
            }
        }
        out
    }
}

/// Objectives reported for a candidate whose simulation reached a panic
/// state (negative gap, unsolvable plan). Large but finite so sorting and
/// serialization stay well-defined.
pub const SENTINEL_OBJECTIVE: f64 = 1e6;
/// Violation reported for such candidates; far above any geometric excess.
pub const SENTINEL_VIOLATION: f64 = 1e3;

/// Normalized distance of each decision variable from its allowed bracket.
fn candidate_box_violation(c: &LcCandidate, b: &crate::scenario::KinematicBounds) -> f64 {
    let checks = [
        (c.t_wait, b.t_wait_min, b.t_wait_max),
        (c.t_dur, b.t_lc_min, b.t_lc_max),
        (c.x_disp, b.x_lc_min, b.x_lc_max),
        (c.v_end, b.v_end_min, b.v_end_max),
        (c.a_end, b.a_end_min, b.a_end_max),
    ];
    let mut v = 0.0;
    for (x, lo, hi) in checks {
        if x < lo {
            v += (lo - x) / lo.abs().max(1e-9);
        }
        if x > hi {
            v += (x - hi) / hi.abs().max(1e-9);
        }
    }
    v
}

/// Indices into the state vector by role.
struct Roles {
    /// Target-lane queue, front to rear.
    queue: Vec<usize>,
    lc: usize,
    incident: usize,
}

fn find_roles(states: &[VehicleState]) -> Result<Roles> {
    let queue: Vec<usize> = states
        .iter()
        .enumerate()
        .filter(|(_, s)| s.lane == Lane::Target)
        .map(|(i, _)| i)
        .collect();
    let lc = states
        .iter()
        .position(|s| s.kind == VehicleKind::AvLc)
        .ok_or_else(|| Error::config("scenario", "no lane-changing vehicle in the state"))?;
    let incident = states
        .iter()
        .position(|s| s.lane == Lane::Original && s.kind != VehicleKind::AvLc)
        .ok_or_else(|| Error::config("scenario", "no original-lane leader in the state"))?;
    if queue.is_empty() {
        return Err(Error::config("scenario", "empty target-lane queue"));
    }
    for w in queue.windows(2) {
        if states[w[1]].x >= states[w[0]].x {
            return Err(Error::config("scenario", "target-lane queue not ordered front to rear"));
        }
    }
    Ok(Roles { queue, lc, incident })
}

/// The lane-changer's stage-2 motion per tick, either planned or realized.
fn lc_path_for_mode(
    plan: &crate::trajectory::QuinticPair,
    samples: &[TrajectorySample],
    mode: SimMode,
    config: &ScenarioConfig,
    dt: f64,
) -> Result<Vec<TrajectorySample>> {
    match mode {
        SimMode::Ideal => Ok(samples.to_vec()),
        SimMode::Tracked => {
            let result = track_trajectory(plan, &config.mpc, dt)?;
            // Rebuild sample-shaped records from realized poses; derivatives
            // by finite differences of the realized speed components.
            let n = result.ticks.len();
            let mut out: Vec<TrajectorySample> = Vec::with_capacity(n);
            for (k, tick) in result.ticks.iter().enumerate() {
                let s = &tick.state;
                out.push(TrajectorySample {
                    t: tick.t,
                    x: s.x,
                    y: s.y,
                    vx: s.v_r * s.phi.cos(),
                    vy: s.v_r * s.phi.sin(),
                    ax: 0.0,
                    ay: 0.0,
                    jx: 0.0,
                    jy: 0.0,
                    theta: s.phi,
                });
                if k > 0 {
                    let (ax, ay) = (
                        (out[k].vx - out[k - 1].vx) / dt,
                        (out[k].vy - out[k - 1].vy) / dt,
                    );
                    out[k].ax = ax;
                    out[k].ay = ay;
                    out[k].jx = (out[k].ax - out[k - 1].ax) / dt;
                    out[k].jy = (out[k].ay - out[k - 1].ay) / dt;
                }
            }
            // First tick inherits the initial plan derivatives (the rollout
            // starts exactly on the plan).
            if let Some(first) = out.first_mut() {
                first.ax = samples[0].ax;
                first.ay = samples[0].ay;
                first.jx = samples[0].jx;
                first.jy = samples[0].jy;
            }
            Ok(out)
        }
    }
}

fn vehicle_from_sample(template: &VehicleState, s: &TrajectorySample, lane_width: f64) -> VehicleState {
    let v = (s.vx * s.vx + s.vy * s.vy).sqrt();
    VehicleState {
        x: s.x,
        y: s.y,
        v,
        a: (s.ax * s.ax + s.ay * s.ay).sqrt().copysign(s.ax),
        jerk: (s.jx * s.jx + s.jy * s.jy).sqrt(),
        heading: s.theta,
        lane: lane_for_lateral(s.y, lane_width),
        ..*template
    }
}

fn desired_speed(kind: VehicleKind, config: &ScenarioConfig) -> f64 {
    match kind {
        VehicleKind::Hv => config.lcm_params.v_desire,
        _ => config.idm_params.v_desire,
    }
}

/// Full deterministic rollout of one candidate.
fn simulate(
    candidate: &LcCandidate,
    warmed: &[VehicleState],
    config: &ScenarioConfig,
    mode: SimMode,
    with_windows: bool,
) -> Result<(SimulationTrace, CostBreakdown)> {
    let dt = config.sim_step;
    let t0 = config.warmup_duration;
    let wait_ticks = (candidate.t_wait / dt).round() as usize;
    let dur_ticks = (candidate.t_dur / dt).round().max(1.0) as usize;
    let t_start = t0 + wait_ticks as f64 * dt;
    let duration = dur_ticks as f64 * dt;
    let t_end = t_start + duration;

    let mut states = warmed.to_vec();
    let roles = find_roles(&states)?;
    let insertion_pos = config.insertion_leader_index().min(roles.queue.len() - 1);
    let cost_followers: Vec<usize> = roles.queue[insertion_pos + 1..].to_vec();

    // Controllers keyed by state index; HV delay queues primed at equilibrium.
    let mut ctl: Vec<Option<FollowerCtl>> = states.iter().map(|_| None).collect();
    for &qi in &roles.queue[1..] {
        ctl[qi] = Some(FollowerCtl::new(states[qi].kind, &config.lcm_params, dt));
    }
    ctl[roles.lc] = Some(FollowerCtl::new(VehicleKind::AvLc, &config.lcm_params, dt));

    let w = &config.cost_weights;
    let mut lc_series: Vec<TickCost> = Vec::new();
    let mut follower_series: Vec<Vec<TickCost>> = vec![Vec::new(); cost_followers.len()];
    let mut ticks = vec![TickRecord { t: t0, states: states.clone() }];

    let accumulate_follower_costs =
        |states: &[VehicleState],
         leader_of: &dyn Fn(usize) -> usize,
         follower_series: &mut Vec<Vec<TickCost>>| {
            for (ci, &fi) in cost_followers.iter().enumerate() {
                let f = &states[fi];
                let l = &states[leader_of(fi)];
                follower_series[ci].push(step_cost(
                    f.jerk,
                    f.v,
                    desired_speed(f.kind, config),
                    Some((f.v - l.v, l.x - f.x)),
                    w,
                ));
            }
        };

    // Stage 1: the lane-changer closes on the stopped original-lane leader
    // under IDM; the target-lane queue keeps its car-following chain.
    for k in 1..=wait_ticks {
        let snapshot = states.clone();
        let mut accels: Vec<(usize, f64)> = Vec::new();
        for (pos, &qi) in roles.queue.iter().enumerate().skip(1) {
            let leader = roles.queue[pos - 1];
            let a = ctl[qi].as_mut().unwrap().command(
                &snapshot[qi],
                &snapshot[leader],
                &config.lcm_params,
                &config.idm_params,
            )?;
            accels.push((qi, a));
        }
        let a_lc = ctl[roles.lc].as_mut().unwrap().command(
            &snapshot[roles.lc],
            &snapshot[roles.incident],
            &config.lcm_params,
            &config.idm_params,
        )?;
        accels.push((roles.lc, a_lc));
        let head = roles.queue[0];
        states[head].x += states[head].v * dt;
        for (i, a) in accels {
            integrate_vehicle(&mut states[i], a, dt);
        }
        ticks.push(TickRecord { t: t0 + k as f64 * dt, states: states.clone() });

        let lc = &states[roles.lc];
        let inc = &states[roles.incident];
        lc_series.push(step_cost(
            lc.jerk,
            lc.v,
            desired_speed(lc.kind, config),
            Some((lc.v - inc.v, inc.x - lc.x)),
            w,
        ));
        let queue = &roles.queue;
        let leader_of = |fi: usize| queue[queue.iter().position(|&q| q == fi).unwrap() - 1];
        accumulate_follower_costs(&states, &leader_of, &mut follower_series);
    }

    // Plan the lane change from the realized stage-1 end state.
    let lc_at_start = states[roles.lc];
    let plan = solve_quintic(
        StartState { x: lc_at_start.x, v: lc_at_start.v, a: lc_at_start.a, t: t_start },
        EndState { x_disp: candidate.x_disp, v: candidate.v_end, a: candidate.a_end },
        duration,
        config.lane_width,
    )?;
    let samples = sample_trajectory(&plan, dt);
    let lc_path = lc_path_for_mode(&plan, &samples, mode, config, dt)?;

    // Follower weights frozen at the steering onset.
    let weight_inputs: Vec<(f64, f64)> = cost_followers
        .iter()
        .map(|&fi| {
            let f = &states[fi];
            ((lc_at_start.v - f.v).abs(), lc_at_start.x - f.x)
        })
        .collect();
    let weights = follower_weights(&weight_inputs)?;

    // Stage 2: the lane-changer follows its path; the insertion follower
    // re-targets it (at onset by default, at lane entry behind the switch).
    let mut retargeted = !config.retarget_on_lane_entry;
    let insertion_follower = cost_followers.first().copied();
    for (k, path_tick) in lc_path.iter().enumerate().skip(1) {
        let snapshot = states.clone();
        if !retargeted && path_tick.y > config.lane_width / 2.0 {
            retargeted = true;
        }
        let mut accels: Vec<(usize, f64)> = Vec::new();
        // The follower chain sees the lane-changer projected onto the target
        // lane: planned longitudinal position and longitudinal speed.
        let mut lc_projected = snapshot[roles.lc];
        lc_projected.v = lc_path[k - 1].vx;
        for (pos, &qi) in roles.queue.iter().enumerate().skip(1) {
            let leader_state = if retargeted && Some(qi) == insertion_follower {
                lc_projected
            } else {
                snapshot[roles.queue[pos - 1]]
            };
            let a = ctl[qi].as_mut().unwrap().command(
                &snapshot[qi],
                &leader_state,
                &config.lcm_params,
                &config.idm_params,
            )?;
            accels.push((qi, a));
        }
        let head = roles.queue[0];
        states[head].x += states[head].v * dt;
        for (i, a) in accels {
            integrate_vehicle(&mut states[i], a, dt);
        }
        states[roles.lc] = vehicle_from_sample(&snapshot[roles.lc], path_tick, config.lane_width);
        ticks.push(TickRecord {
            t: t_start + k as f64 * dt,
            states: states.clone(),
        });

        let lc = &states[roles.lc];
        let leader = &states[roles.queue[insertion_pos]];
        lc_series.push(step_cost(
            (path_tick.jx * path_tick.jx + path_tick.jy * path_tick.jy).sqrt(),
            lc.v,
            desired_speed(lc.kind, config),
            Some((lc.v - leader.v, leader.x - lc.x)),
            w,
        ));
        let queue = &roles.queue;
        let lc_idx = roles.lc;
        let leader_of = |fi: usize| {
            if retargeted && Some(fi) == insertion_follower {
                lc_idx
            } else {
                queue[queue.iter().position(|&q| q == fi).unwrap() - 1]
            }
        };
        accumulate_follower_costs(&states, &leader_of, &mut follower_series);
    }

    // Constraint violation: plan-geometry excess, decision-box excess, and
    // collisions of the executed path against every other vehicle.
    let mut violation = check_kinematic_limits(&samples, &config.bounds)
        + candidate_box_violation(candidate, &config.bounds);
    {
        let stage2 = &ticks[wait_ticks..];
        debug_assert_eq!(stage2.len(), lc_path.len());
        let neighbor_traces: Vec<Vec<VehicleState>> = (0..states.len())
            .filter(|&i| i != roles.lc)
            .map(|i| stage2.iter().map(|rec| rec.states[i]).collect())
            .collect();
        violation += clearance_over_horizon(
            &lc_path,
            &neighbor_traces,
            (config.ellipse_a, config.ellipse_b),
        )?;
    }

    let j_lc = aggregate_jlc(&lc_series, w);
    let j_tf = aggregate_jtf(&follower_series, &weights, w)?;

    // Tail window: the lane-changer joins the queue and everyone relaxes.
    if with_windows {
        let tail_ticks = (config.tail / dt).round() as usize;
        let mut queue = roles.queue.clone();
        queue.insert(insertion_pos + 1, roles.lc);
        ctl[roles.lc] = Some(FollowerCtl::new(VehicleKind::AvLc, &config.lcm_params, dt));
        for k in 1..=tail_ticks {
            let snapshot = states.clone();
            let mut accels: Vec<(usize, f64)> = Vec::new();
            for (pos, &qi) in queue.iter().enumerate().skip(1) {
                let a = ctl[qi].as_mut().unwrap().command(
                    &snapshot[qi],
                    &snapshot[queue[pos - 1]],
                    &config.lcm_params,
                    &config.idm_params,
                )?;
                accels.push((qi, a));
            }
            let head = queue[0];
            states[head].x += states[head].v * dt;
            for (i, a) in accels {
                integrate_vehicle(&mut states[i], a, dt);
            }
            ticks.push(TickRecord { t: t_end + k as f64 * dt, states: states.clone() });
        }

        // Lead-in window: steady pre-decision motion, extrapolated backwards.
        let lead_ticks = (config.lead_in / dt).round() as usize;
        let mut lead: Vec<TickRecord> = (1..=lead_ticks)
            .map(|k| {
                let back = k as f64 * dt;
                let states = ticks[0]
                    .states
                    .iter()
                    .map(|s| VehicleState { x: s.x - s.v * back, ..*s })
                    .collect();
                TickRecord { t: t0 - back, states }
            })
            .collect();
        lead.reverse();
        lead.extend(ticks);
        ticks = lead;
    }

    let trace = SimulationTrace { dt, t0, t_start, t_end, mode, ticks };
    let breakdown = CostBreakdown {
        lc_series,
        follower_series,
        follower_weights: weights,
        j_lc,
        j_tf,
        constraint_violation: violation,
    };
    Ok((trace, breakdown))
}

/// Objective pair and constraint violation of one candidate. Never fails:
/// simulation panic states (negative gap, unsolvable plan) become a large
/// sentinel violation with a logged diagnostic.
pub fn evaluate_candidate(
    candidate: &LcCandidate,
    warmed: &[VehicleState],
    config: &ScenarioConfig,
) -> (f64, f64, f64) {
    match simulate(candidate, warmed, config, SimMode::Ideal, false) {
        Ok((_, breakdown)) => (breakdown.j_lc, breakdown.j_tf, breakdown.constraint_violation),
        Err(e) => {
            log::warn!("candidate {candidate:?} hit a simulation panic state: {e}");
            (SENTINEL_OBJECTIVE, SENTINEL_OBJECTIVE, SENTINEL_VIOLATION)
        }
    }
}

/// Full trace (with lead-in and tail windows) and cost breakdown of one
/// feasible candidate.
pub fn run_final(
    candidate: &LcCandidate,
    warmed: &[VehicleState],
    config: &ScenarioConfig,
    mode: SimMode,
) -> Result<(SimulationTrace, CostBreakdown)> {
    simulate(candidate, warmed, config, mode, true)
}

/// Run the evolutionary search over the lane-change decision space.
pub fn optimize(warmed: &[VehicleState], config: &ScenarioConfig) -> Result<EvolveOutcome> {
    let bounds = LcCandidate::bounds(&config.bounds);
    let warmed = warmed.to_vec();
    nsga2::evolve(
        move |genome| {
            let candidate = LcCandidate::from_genome(genome);
            let (j_lc, j_tf, violation) = evaluate_candidate(&candidate, &warmed, config);
            Ok(([j_lc, j_tf], violation))
        },
        &bounds,
        &config.nsga_params,
    )
}

/// The reference strategy from self-centered planners: the front member
/// minimizing the lane-changer's own cost (leftmost point; ties by lower
/// follower cost).
pub fn existing_algorithm_baseline(front: &ParetoFront) -> Result<usize> {
    if front.members.is_empty() {
        return Err(Error::EmptyFront);
    }
    let mut best = 0;
    let mut best_key = (f64::INFINITY, f64::INFINITY);
    for (i, m) in front.members.iter().enumerate() {
        let key = (m.eval.objectives[0], m.eval.objectives[1]);
        if key < best_key {
            best_key = key;
            best = i;
        }
    }
    Ok(best)
}
