//! First-order point-mass drone: commanded velocities are realized instantly,
//! clamped to the platform limits, and integrated over the control interval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{in_bounds, distance_to_nearest_obstacle, ObstacleField};

#[derive(Debug, Error)]
pub enum VehicleError {
    #[error("non-finite action component: {0}")]
    NonFiniteAction(String),
    #[error("non-positive control interval: {0}")]
    BadDt(f64),
}

/// Pose and rates. `yaw` stays wrapped to (−π, π]; velocity/yaw_rate record
/// the clamped commands applied at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl VehicleState {
    pub fn at_rest(position: [f64; 3], yaw: f64) -> Self {
        VehicleState {
            position,
            velocity: [0.0; 3],
            yaw: wrap_angle(yaw),
            yaw_rate: 0.0,
        }
    }
}

/// A raw command; clamping happens on application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub v_cmd: [f64; 3],
    pub yaw_rate_cmd: f64,
}

/// Per-axis command limits (m/s, rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsLimits {
    pub vx_max: f64,
    pub vy_max: f64,
    pub vz_max: f64,
    pub yaw_rate_max: f64,
}

impl Default for DynamicsLimits {
    fn default() -> Self {
        DynamicsLimits {
            vx_max: 3.0,
            vy_max: 3.0,
            vz_max: 2.0,
            yaw_rate_max: 0.3,
        }
    }
}

/// How a normalized policy output in [−1,1]ⁿ maps onto velocity commands.
///
/// `WorldFrame4` is the full command set: world-frame velocity on each axis
/// plus yaw rate. `BodyFrame3` drops lateral control: a non-negative forward
/// speed along the current heading, vertical speed, and yaw rate — the
/// reduced variant used for the action-space comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    #[serde(rename = "4d")]
    WorldFrame4,
    #[serde(rename = "3d")]
    BodyFrame3,
}

impl ActionMode {
    pub fn dims(self) -> usize {
        match self {
            ActionMode::WorldFrame4 => 4,
            ActionMode::BodyFrame3 => 3,
        }
    }

    /// Scales a normalized action onto physical commands. `yaw` is the
    /// current heading; only `BodyFrame3` uses it.
    pub fn to_action(self, normalized: &[f64], yaw: f64, limits: &DynamicsLimits) -> Action {
        assert_eq!(normalized.len(), self.dims(), "action dimensionality");
        match self {
            ActionMode::WorldFrame4 => Action {
                v_cmd: [
                    normalized[0] * limits.vx_max,
                    normalized[1] * limits.vy_max,
                    normalized[2] * limits.vz_max,
                ],
                yaw_rate_cmd: normalized[3] * limits.yaw_rate_max,
            },
            ActionMode::BodyFrame3 => {
                // forward-only: [−1,1] maps to [0, vx_max] along the heading
                let speed = (normalized[0] + 1.0) / 2.0 * limits.vx_max;
                Action {
                    v_cmd: [speed * yaw.cos(), speed * yaw.sin(), normalized[1] * limits.vz_max],
                    yaw_rate_cmd: normalized[2] * limits.yaw_rate_max,
                }
            }
        }
    }
}

/// Episode outcome for one step. Terminal variants end the episode; Timeout
/// is a truncation (the value function still bootstraps through it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEvent {
    Running,
    Goal,
    Collision,
    OutOfBounds,
    Timeout,
}

impl EpisodeEvent {
    /// True for events that end the episode (including truncation).
    pub fn ends_episode(self) -> bool {
        !matches!(self, EpisodeEvent::Running)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeEvent::Running => "running",
            EpisodeEvent::Goal => "goal",
            EpisodeEvent::Collision => "collision",
            EpisodeEvent::OutOfBounds => "out_of_bounds",
            EpisodeEvent::Timeout => "timeout",
        }
    }
}

/// Goal/collision/timeout thresholds used by [`classify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRules {
    pub accept_radius: f64,
    pub crash_distance: f64,
    pub max_episode_steps: u32,
}

impl Default for EpisodeRules {
    fn default() -> Self {
        EpisodeRules {
            accept_radius: 2.0,
            crash_distance: 1.0,
            max_episode_steps: 500,
        }
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    PI - (PI - a).rem_euclid(2.0 * PI)
}

/// Clamps the command to the limits and integrates one interval.
pub fn apply_action(
    state: &VehicleState,
    a: &Action,
    dt: f64,
    limits: &DynamicsLimits,
) -> Result<VehicleState, VehicleError> {
    if !(dt > 0.0) {
        return Err(VehicleError::BadDt(dt));
    }
    if !a.v_cmd.iter().all(|v| v.is_finite()) || !a.yaw_rate_cmd.is_finite() {
        return Err(VehicleError::NonFiniteAction(format!("{a:?}")));
    }
    let v = [
        a.v_cmd[0].clamp(-limits.vx_max, limits.vx_max),
        a.v_cmd[1].clamp(-limits.vy_max, limits.vy_max),
        a.v_cmd[2].clamp(-limits.vz_max, limits.vz_max),
    ];
    let rate = a.yaw_rate_cmd.clamp(-limits.yaw_rate_max, limits.yaw_rate_max);
    Ok(VehicleState {
        position: [
            state.position[0] + v[0] * dt,
            state.position[1] + v[1] * dt,
            state.position[2] + v[2] * dt,
        ],
        velocity: v,
        yaw: wrap_angle(state.yaw + rate * dt),
        yaw_rate: rate,
    })
}

/// Classifies the state after a step. Precedence: Goal, then Collision, then
/// OutOfBounds, then Timeout, else Running.
pub fn classify(
    state: &VehicleState,
    field: &ObstacleField,
    goal: [f64; 3],
    step_index: u32,
    rules: &EpisodeRules,
) -> EpisodeEvent {
    let to_goal = ((state.position[0] - goal[0]).powi(2)
        + (state.position[1] - goal[1]).powi(2)
        + (state.position[2] - goal[2]).powi(2))
    .sqrt();
    if to_goal <= rules.accept_radius {
        return EpisodeEvent::Goal;
    }
    // the crash shell only needs distances below the threshold; cap tightly
    let d_o = distance_to_nearest_obstacle(field, state.position, rules.crash_distance + 1.0);
    if d_o < rules.crash_distance {
        return EpisodeEvent::Collision;
    }
    if !in_bounds(&field.bounds, state.position) {
        return EpisodeEvent::OutOfBounds;
    }
    if step_index >= rules.max_episode_steps {
        return EpisodeEvent::Timeout;
    }
    EpisodeEvent::Running
}
