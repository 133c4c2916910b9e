//! Episode simulator: obstacle field, point-mass dynamics, depth sensing,
//! observation corruption, and reward, behind a reset/step interface.
//!
//! The obstacle layout comes from the config's `field_seed`, so every
//! environment of one run — parallel collectors and the evaluator alike —
//! flies the same world. Each environment additionally owns one RNG stream
//! derived from its own seed that drives goal placement and observation
//! noise in a fixed draw order: reset draws the goal bearing, then the
//! corruption draws; every step draws corruption only. That makes a
//! `(seed, config)` pair replayable bit-for-bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::{corrupt_observation, NoiseConfig};
use crate::reward::{step_reward, terminal_reward, RewardConfig, RewardContext, RewardError};
use crate::sensing::{observe, CameraModel, Observation};
use crate::vehicle::{
    apply_action, classify, ActionMode, DynamicsLimits, EpisodeEvent, EpisodeRules, VehicleError,
    VehicleState,
};
use crate::world::{distance_to_nearest_obstacle, generate_field, FieldSpec, ObstacleField, WorldError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid env config: {0}")]
    InvalidConfig(String),
    #[error("episode already ended; call reset")]
    EpisodeOver,
    #[error("action has {got} dims, mode needs {want}")]
    BadAction { got: usize, want: usize },
}

/// Everything that defines one environment except its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub field: FieldSpec,
    /// Seed of the obstacle layout. Kept separate from the per-environment
    /// seed so parallel collectors and the evaluator all fly one shared
    /// world while drawing independent goals and noise.
    #[serde(default = "default_field_seed")]
    pub field_seed: u64,
    /// Control interval, seconds.
    pub dt: f64,
    pub limits: DynamicsLimits,
    pub rules: EpisodeRules,
    pub cam: CameraModel,
    pub noise: NoiseConfig,
    pub reward: RewardConfig,
    /// Start pose; goals are sampled on the ring of radius
    /// `field.goal_ring_radius` about `field.start_xy` at `goal_height`.
    pub start: [f64; 3],
    pub goal_height: f64,
    pub action_mode: ActionMode,
}

fn default_field_seed() -> u64 {
    42
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            field: FieldSpec::default(),
            field_seed: default_field_seed(),
            dt: 0.1,
            limits: DynamicsLimits::default(),
            rules: EpisodeRules::default(),
            cam: CameraModel::default(),
            noise: NoiseConfig::default(),
            reward: RewardConfig::default(),
            start: [0.0, 0.0, 5.0],
            goal_height: 5.0,
            action_mode: ActionMode::WorldFrame4,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        self.field.validate()?;
        self.reward.validate()?;
        self.noise.validate().map_err(EnvError::InvalidConfig)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        // the collision shell and the reward's crash threshold are the same
        // quantity; let them drift apart and rewards stop matching outcomes
        if self.reward.d_c != self.rules.crash_distance {
            return bad(format!(
                "reward d_c {} differs from crash distance {}",
                self.reward.d_c, self.rules.crash_distance
            ));
        }
        let b = &self.field.bounds;
        let [sx, sy] = self.field.start_xy;
        let r = self.field.goal_ring_radius;
        if !(r > 0.0) {
            return bad("goal ring radius must be positive".into());
        }
        let inside = sx - r >= b.x[0]
            && sx + r <= b.x[1]
            && sy - r >= b.y[0]
            && sy + r <= b.y[1]
            && self.goal_height >= b.z[0]
            && self.goal_height <= b.z[1];
        if !inside {
            return bad("goal ring leaves the flight bounds".into());
        }
        let start_in = self.start[0] >= b.x[0]
            && self.start[0] <= b.x[1]
            && self.start[1] >= b.y[0]
            && self.start[1] <= b.y[1]
            && self.start[2] >= b.z[0]
            && self.start[2] <= b.z[1];
        if !start_in {
            return bad("start position leaves the flight bounds".into());
        }
        Ok(())
    }
}

/// Outcome of one control step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub priv_obs: Observation,
    pub corrupt_obs: Observation,
    pub reward: f64,
    pub event: EpisodeEvent,
    /// True termination (Goal/Collision/OutOfBounds): no value bootstrap.
    pub terminal: bool,
    /// Step-cap truncation: the episode ends but values still bootstrap.
    pub truncated: bool,
    /// Distance to the nearest obstacle after the step (capped at `d_max`).
    pub d_o: f64,
}

/// Horizontal cross-track distance from `p` to the infinite line through
/// `a` and `b` (all in the xy-plane).
pub fn cross_track_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
    let len = (ex * ex + ey * ey).sqrt();
    debug_assert!(len > 0.0, "degenerate reference line");
    ((p[0] - a[0]) * ey - (p[1] - a[1]) * ex).abs() / len
}

/// One navigation environment instance.
pub struct NavEnv {
    cfg: EnvConfig,
    field: ObstacleField,
    rng: ChaCha8Rng,
    vehicle: VehicleState,
    goal: [f64; 3],
    step_index: u32,
    /// Straight-line distance start→goal, the progress normalizer.
    d_g: f64,
    d_prev: f64,
    episode_done: bool,
}

impl NavEnv {
    /// Generates the obstacle field from `cfg.field_seed` and hands the
    /// environment its own decorrelated RNG stream derived from `seed`.
    pub fn new(seed: u64, cfg: EnvConfig) -> Result<Self, EnvError> {
        let field = generate_field(cfg.field_seed, &cfg.field)?;
        Self::with_field(field, cfg, seed)
    }

    /// Wraps an existing field (tests, hand-built scenarios).
    pub fn with_field(field: ObstacleField, cfg: EnvConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1); // field generation used stream 0 of the same seed
        Ok(NavEnv {
            vehicle: VehicleState::at_rest(cfg.start, 0.0),
            goal: [0.0, 0.0, cfg.goal_height],
            cfg,
            field,
            rng,
            step_index: 0,
            d_g: 1.0,
            d_prev: 1.0,
            episode_done: true,
        })
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn field(&self) -> &ObstacleField {
        &self.field
    }

    pub fn vehicle(&self) -> &VehicleState {
        &self.vehicle
    }

    pub fn goal(&self) -> [f64; 3] {
        self.goal
    }

    pub fn step_index(&self) -> u32 {
        self.step_index
    }

    pub fn episode_done(&self) -> bool {
        self.episode_done
    }

    /// Distance from the current position to the nearest obstacle surface,
    /// capped at the sensing range (for logging and trajectory export).
    pub fn obstacle_distance(&self) -> f64 {
        distance_to_nearest_obstacle(&self.field, self.vehicle.position, self.cfg.cam.d_max)
    }

    /// Starts a fresh episode: goal drawn uniformly on the ring, vehicle at
    /// rest on the start pose facing +x. Returns the privileged observation
    /// and its corrupted counterpart.
    pub fn reset(&mut self) -> (Observation, Observation) {
        let phi = self.rng.random_range(0.0..std::f64::consts::TAU);
        let [sx, sy] = self.cfg.field.start_xy;
        let r = self.cfg.field.goal_ring_radius;
        self.goal = [sx + r * phi.cos(), sy + r * phi.sin(), self.cfg.goal_height];
        self.vehicle = VehicleState::at_rest(self.cfg.start, 0.0);
        self.step_index = 0;
        self.d_g = dist3(self.cfg.start, self.goal);
        self.d_prev = self.d_g;
        self.episode_done = false;
        let priv_obs = observe(&self.field, &self.vehicle, self.goal, &self.cfg.cam);
        let corrupt = corrupt_observation(&priv_obs, &self.cfg.noise, &mut self.rng);
        (priv_obs, corrupt)
    }

    /// Applies one normalized action. The dense reward uses privileged
    /// distances; terminal bonuses are added outside the clip.
    pub fn step(&mut self, normalized: &[f64]) -> Result<StepResult, EnvError> {
        if self.episode_done {
            return Err(EnvError::EpisodeOver);
        }
        let want = self.cfg.action_mode.dims();
        if normalized.len() != want {
            return Err(EnvError::BadAction { got: normalized.len(), want });
        }
        let action = self
            .cfg
            .action_mode
            .to_action(normalized, self.vehicle.yaw, &self.cfg.limits);
        self.vehicle = apply_action(&self.vehicle, &action, self.cfg.dt, &self.cfg.limits)?;
        self.step_index += 1;

        let event = classify(&self.vehicle, &self.field, self.goal, self.step_index, &self.cfg.rules);
        let p = self.vehicle.position;
        let d_t = dist3(p, self.goal);
        let d_o = distance_to_nearest_obstacle(&self.field, p, self.cfg.cam.d_max);
        let [sx, sy] = self.cfg.field.start_xy;
        let d_l = cross_track_distance([p[0], p[1]], [sx, sy], [self.goal[0], self.goal[1]]);
        let ctx = RewardContext {
            d_t,
            d_prev: self.d_prev,
            d_g: self.d_g,
            d_l,
            z: p[2],
            z_g: self.goal[2],
            d_o,
        };
        let reward = step_reward(&ctx, &self.cfg.reward)? + terminal_reward(event, &self.cfg.reward);
        self.d_prev = d_t;
        self.episode_done = event.ends_episode();

        let priv_obs = observe(&self.field, &self.vehicle, self.goal, &self.cfg.cam);
        let corrupt_obs = corrupt_observation(&priv_obs, &self.cfg.noise, &mut self.rng);
        Ok(StepResult {
            priv_obs,
            corrupt_obs,
            reward,
            event,
            terminal: matches!(
                event,
                EpisodeEvent::Goal | EpisodeEvent::Collision | EpisodeEvent::OutOfBounds
            ),
            truncated: event == EpisodeEvent::Timeout,
            d_o,
        })
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
