//! Shaped step reward plus sparse terminal rewards.
//!
//! The continuous part combines goal progress, deviation from the start–goal
//! line (lateral and vertical), and obstacle proximity, clipped to [−1, 1].
//! Sparse terminal rewards are added outside that clip — otherwise +10/−5
//! could never outweigh the shaped part.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::EpisodeEvent;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("invalid reward context: {0}")]
    InvalidContext(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub eta_r: f64,
    pub eta_p: f64,
    pub eta_o: f64,
    /// Crash shell: proximity penalty saturates at 1 here.
    pub d_c: f64,
    /// Safe shell: proximity penalty vanishes at or beyond this.
    pub d_s: f64,
    pub goal_reward: f64,
    pub crash_penalty: f64,
    pub oob_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            eta_r: 5.0,
            eta_p: 0.5,
            eta_o: 1.0,
            d_c: 1.0,
            d_s: 4.0,
            goal_reward: 10.0,
            crash_penalty: -5.0,
            oob_penalty: -5.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.d_s > self.d_c && self.d_c > 0.0) {
            return Err(RewardError::InvalidContext(format!(
                "need d_s > d_c > 0, got d_s={} d_c={}",
                self.d_s, self.d_c
            )));
        }
        if self.eta_r < 0.0 || self.eta_p < 0.0 || self.eta_o < 0.0 {
            return Err(RewardError::InvalidContext("negative reward scale".into()));
        }
        Ok(())
    }
}

/// Everything the step reward reads: distances to goal now and at the
/// previous step, start–goal distance and line deviation, heights, and the
/// distance to the nearest obstacle surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardContext {
    pub d_t: f64,
    pub d_prev: f64,
    pub d_g: f64,
    pub d_l: f64,
    pub z: f64,
    pub z_g: f64,
    pub d_o: f64,
}

fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    v.clamp(lo, hi)
}

/// r_e = (d_{t−1} − d_t) / d_g
pub fn progress_term(ctx: &RewardContext) -> Result<f64, RewardError> {
    if !(ctx.d_g > 0.0) {
        return Err(RewardError::InvalidContext(format!(
            "start-goal distance must be positive, got {}",
            ctx.d_g
        )));
    }
    Ok((ctx.d_prev - ctx.d_t) / ctx.d_g)
}

/// p_p = |clip(d_l/10, 0, 1)| + 2·|clip((z − z_g)/5, −1, 1)|
pub fn path_penalty(ctx: &RewardContext) -> f64 {
    clip(ctx.d_l / 10.0, 0.0, 1.0).abs() + 2.0 * clip((ctx.z - ctx.z_g) / 5.0, -1.0, 1.0).abs()
}

/// p_o = 1 − clip((d_o − d_c)/(d_s − d_c), 0, 1) inside the safe shell, 0
/// outside.
pub fn proximity_penalty(ctx: &RewardContext, cfg: &RewardConfig) -> f64 {
    if ctx.d_o < cfg.d_s {
        1.0 - clip((ctx.d_o - cfg.d_c) / (cfg.d_s - cfg.d_c), 0.0, 1.0)
    } else {
        0.0
    }
}

/// r = clip(η_r·r_e − η_p·p_p − η_o·p_o, −1, 1)
pub fn step_reward(ctx: &RewardContext, cfg: &RewardConfig) -> Result<f64, RewardError> {
    let r_e = progress_term(ctx)?;
    let p_p = path_penalty(ctx);
    let p_o = proximity_penalty(ctx, cfg);
    Ok(clip(
        cfg.eta_r * r_e - cfg.eta_p * p_p - cfg.eta_o * p_o,
        -1.0,
        1.0,
    ))
}

/// Sparse reward added to the final step's reward, outside the clip.
pub fn terminal_reward(event: EpisodeEvent, cfg: &RewardConfig) -> f64 {
    match event {
        EpisodeEvent::Goal => cfg.goal_reward,
        EpisodeEvent::Collision => cfg.crash_penalty,
        EpisodeEvent::OutOfBounds => cfg.oob_penalty,
        EpisodeEvent::Timeout | EpisodeEvent::Running => 0.0,
    }
}
