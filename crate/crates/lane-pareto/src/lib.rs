//! Deterministic mixed-traffic lane-change simulation and multi-objective
//! optimization of the maneuver execution point and trajectory.
//!
//! The pipeline: warm a mixed queue of human-driven (delayed longitudinal
//! control model) and autonomous (IDM) vehicles to a steady car-following
//! state, plan candidate lane changes as quintic polynomial pairs, simulate
//! each candidate's effect on the lane-changer and the target-lane
//! followers, and search the (changer cost, follower cost) trade-off with an
//! elitist genetic multi-objective optimizer. A kinematic-bicycle MPC
//! verifies the winning plan is trackable.

pub mod analysis;
pub mod cf_models;
pub mod collision;
pub mod cost;
pub mod error;
pub mod nsga2;
pub mod scenario;
pub mod sim_engine;
pub mod tracking;
pub mod trajectory;

pub use error::{Error, Result};
pub use scenario::{KinematicBounds, Lane, ScenarioConfig, VehicleKind, VehicleState};
