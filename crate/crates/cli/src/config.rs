//! Plain-text run configuration: sectioned `key = value` files mapped onto
//! the typed run config, plus environment-variable and flag overrides.
//!
//! Layering: built-in defaults, then the config file, then `AERONAV_*`
//! environment variables, then `--override` flags; later layers win. Every
//! key is checked against a closed list, so typos fail loudly with the
//! offending location. `serialize_config` writes the canonical form: parsing
//! it back reproduces the typed config exactly.

use std::fmt::Write as _;
use std::path::Path;

use aeronav_core::orchestrator::{ExecMode, RunConfig};
use aeronav_core::vehicle::ActionMode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: expected `[section]` or `key = value`, got `{got}`")]
    Syntax { origin: String, got: String },
    #[error("{origin}: key `{key}` appears before any `[section]` header")]
    NoSection { origin: String, key: String },
    #[error("{origin}: unknown section `{name}` (expected one of {SECTIONS:?})")]
    UnknownSection { origin: String, name: String },
    #[error("{origin}: unknown key `{section}.{key}`")]
    UnknownKey { origin: String, section: String, key: String },
    #[error("{origin}: bad value for `{section}.{key}`: {msg}")]
    BadValue { origin: String, section: String, key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub const SECTIONS: [&str; 6] =
    ["environment", "dynamics", "training", "reward", "noise", "orchestrator"];

/// Applies one config-file text on top of `cfg`. `origin_file` names the
/// source in diagnostics (`file.ini:12`).
pub fn apply_text(cfg: &mut RunConfig, text: &str, origin_file: &str) -> Result<(), ConfigError> {
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let origin = format!("{origin_file}:{}", idx + 1);
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = inner.trim().to_ascii_lowercase();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(ConfigError::UnknownSection { origin, name });
            }
            section = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { origin, got: line.into() });
        };
        let key = key.trim().to_ascii_lowercase();
        let Some(sec) = section.as_deref() else {
            return Err(ConfigError::NoSection { origin, key });
        };
        apply_key(cfg, sec, &key, value.trim(), &origin)?;
    }
    Ok(())
}

/// Applies one `section.key=value` override.
pub fn apply_override(cfg: &mut RunConfig, spec: &str, origin: &str) -> Result<(), ConfigError> {
    let err = || ConfigError::Syntax { origin: origin.into(), got: spec.into() };
    let (path, value) = spec.split_once('=').ok_or_else(err)?;
    let (section, key) = path.trim().split_once('.').ok_or_else(err)?;
    let section = section.trim().to_ascii_lowercase();
    if !SECTIONS.contains(&section.as_str()) {
        return Err(ConfigError::UnknownSection { origin: origin.into(), name: section });
    }
    apply_key(cfg, &section, &key.trim().to_ascii_lowercase(), value.trim(), origin)
}

/// Applies `AERONAV_<SECTION>__<KEY>=value` process environment overrides in
/// alphabetical variable order.
pub fn apply_env_overrides(cfg: &mut RunConfig) -> Result<(), ConfigError> {
    let mut vars: Vec<(String, String)> =
        std::env::vars().filter(|(k, _)| k.starts_with("AERONAV_")).collect();
    vars.sort();
    for (name, value) in vars {
        let origin = format!("env {name}");
        let rest = name.strip_prefix("AERONAV_").expect("filtered");
        let Some((section, key)) = rest.split_once("__") else {
            return Err(ConfigError::Syntax { origin, got: name.clone() });
        };
        let section = section.to_ascii_lowercase();
        if !SECTIONS.contains(&section.as_str()) {
            return Err(ConfigError::UnknownSection { origin, name: section });
        }
        apply_key(cfg, &section, &key.to_ascii_lowercase(), value.trim(), &origin)?;
    }
    Ok(())
}

/// Full load path used by the commands: defaults, optional file, environment,
/// flags, then validation.
pub fn load_run_config(
    path: Option<&Path>,
    file_text: Option<&str>,
    overrides: &[String],
) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let (Some(p), Some(text)) = (path, file_text) {
        apply_text(&mut cfg, text, &p.display().to_string())?;
    }
    apply_env_overrides(&mut cfg)?;
    for spec in overrides {
        apply_override(&mut cfg, spec, &format!("--override {spec}"))?;
    }
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

fn f64v(value: &str, origin: &str, section: &str, key: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.parse().map_err(|_| ConfigError::BadValue {
        origin: origin.into(),
        section: section.into(),
        key: key.into(),
        msg: format!("`{value}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(ConfigError::BadValue {
            origin: origin.into(),
            section: section.into(),
            key: key.into(),
            msg: "must be finite".into(),
        });
    }
    Ok(v)
}

fn intv<T: std::str::FromStr>(
    value: &str,
    origin: &str,
    section: &str,
    key: &str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        origin: origin.into(),
        section: section.into(),
        key: key.into(),
        msg: format!("`{value}` is not a valid integer for this key"),
    })
}

fn boolv(value: &str, origin: &str, section: &str, key: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            origin: origin.into(),
            section: section.into(),
            key: key.into(),
            msg: format!("`{value}` is not `true` or `false`"),
        }),
    }
}

fn list_f64<const N: usize>(
    value: &str,
    origin: &str,
    section: &str,
    key: &str,
) -> Result<[f64; N], ConfigError> {
    let parts: Vec<f64> = value
        .split_whitespace()
        .map(|p| f64v(p, origin, section, key))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|v: Vec<f64>| ConfigError::BadValue {
        origin: origin.into(),
        section: section.into(),
        key: key.into(),
        msg: format!("expected {N} values, got {}", v.len()),
    })
}

fn list_usize<const N: usize>(
    value: &str,
    origin: &str,
    section: &str,
    key: &str,
) -> Result<[usize; N], ConfigError> {
    let parts: Vec<usize> = value
        .split_whitespace()
        .map(|p| intv(p, origin, section, key))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|v: Vec<usize>| ConfigError::BadValue {
        origin: origin.into(),
        section: section.into(),
        key: key.into(),
        msg: format!("expected {N} values, got {}", v.len()),
    })
}

/// Deterministic seed-list resize: truncate, or extend past the current
/// maximum.
fn resize_seeds(seeds: &mut Vec<u64>, n: usize) {
    seeds.truncate(n);
    while seeds.len() < n {
        let next = seeds.iter().copied().max().map_or(1, |m| m + 1);
        seeds.push(next);
    }
}

fn apply_key(
    cfg: &mut RunConfig,
    section: &str,
    key: &str,
    value: &str,
    origin: &str,
) -> Result<(), ConfigError> {
    let f = |v: &str| f64v(v, origin, section, key);
    let b = |v: &str| boolv(v, origin, section, key);
    let bad = |msg: String| ConfigError::BadValue {
        origin: origin.into(),
        section: section.into(),
        key: key.into(),
        msg,
    };
    match (section, key) {
        ("environment", "x_min") => cfg.env.field.bounds.x[0] = f(value)?,
        ("environment", "x_max") => cfg.env.field.bounds.x[1] = f(value)?,
        ("environment", "y_min") => cfg.env.field.bounds.y[0] = f(value)?,
        ("environment", "y_max") => cfg.env.field.bounds.y[1] = f(value)?,
        ("environment", "z_min") => cfg.env.field.bounds.z[0] = f(value)?,
        ("environment", "z_max") => cfg.env.field.bounds.z[1] = f(value)?,
        ("environment", "obstacle_count") => {
            cfg.env.field.count = intv(value, origin, section, key)?
        }
        ("environment", "field_seed") => {
            cfg.env.field_seed = intv::<u64>(value, origin, section, key)?
        }
        ("environment", "obstacle_radius") => cfg.env.field.radius = f(value)?,
        ("environment", "obstacle_height") => cfg.env.field.height = f(value)?,
        ("environment", "disc_radius") => cfg.env.field.disc_radius = f(value)?,
        ("environment", "clearance") => cfg.env.field.clearance = f(value)?,
        ("environment", "start_x") => {
            let v = f(value)?;
            cfg.env.field.start_xy[0] = v;
            cfg.env.start[0] = v;
        }
        ("environment", "start_y") => {
            let v = f(value)?;
            cfg.env.field.start_xy[1] = v;
            cfg.env.start[1] = v;
        }
        ("environment", "start_z") => cfg.env.start[2] = f(value)?,
        ("environment", "goal_ring_radius") => cfg.env.field.goal_ring_radius = f(value)?,
        ("environment", "goal_height") => cfg.env.goal_height = f(value)?,
        ("environment", "accept_radius") => cfg.env.rules.accept_radius = f(value)?,
        // one key drives both the termination shell and the reward formula
        ("environment", "crash_distance") => {
            let v = f(value)?;
            cfg.env.rules.crash_distance = v;
            cfg.env.reward.d_c = v;
        }
        ("environment", "max_episode_steps") => {
            cfg.env.rules.max_episode_steps = intv(value, origin, section, key)?
        }
        // radians are canonical (exact round-trip); degrees accepted on input
        ("environment", "cam_hfov_rad") => cfg.env.cam.hfov = f(value)?,
        ("environment", "cam_hfov_deg") => cfg.env.cam.hfov = f(value)?.to_radians(),
        ("environment", "cam_res_h") => {
            let v = intv(value, origin, section, key)?;
            cfg.env.cam.res_h = v;
            cfg.agent.net.image_h = v;
        }
        ("environment", "cam_res_w") => {
            let v = intv(value, origin, section, key)?;
            cfg.env.cam.res_w = v;
            cfg.agent.net.image_w = v;
        }
        ("environment", "cam_d_max") => cfg.env.cam.d_max = f(value)?,

        ("dynamics", "dt") => cfg.env.dt = f(value)?,
        ("dynamics", "vx_max") => cfg.env.limits.vx_max = f(value)?,
        ("dynamics", "vy_max") => cfg.env.limits.vy_max = f(value)?,
        ("dynamics", "vz_max") => cfg.env.limits.vz_max = f(value)?,
        ("dynamics", "yaw_rate_max") => cfg.env.limits.yaw_rate_max = f(value)?,
        ("dynamics", "action_mode") => {
            let mode = match value {
                "4d" => ActionMode::WorldFrame4,
                "3d" => ActionMode::BodyFrame3,
                _ => return Err(bad(format!("`{value}` is not `4d` or `3d`"))),
            };
            cfg.env.action_mode = mode;
            cfg.agent.action_mode = mode;
        }

        ("training", "gamma") => cfg.agent.gamma = f(value)?,
        ("training", "tau") => cfg.agent.tau = f(value)?,
        ("training", "lr") => cfg.agent.adam.lr = f(value)?,
        ("training", "adam_beta1") => cfg.agent.adam.beta1 = f(value)?,
        ("training", "adam_beta2") => cfg.agent.adam.beta2 = f(value)?,
        ("training", "adam_eps") => cfg.agent.adam.eps = f(value)?,
        ("training", "policy_delay") => cfg.agent.policy_delay = intv(value, origin, section, key)?,
        ("training", "smoothing_sigma") => cfg.agent.smoothing_sigma = f(value)?,
        ("training", "smoothing_clip") => cfg.agent.smoothing_clip = f(value)?,
        ("training", "exploration_sigma") => cfg.agent.exploration_sigma = f(value)?,
        ("training", "batch_size") => cfg.agent.batch_size = intv(value, origin, section, key)?,
        ("training", "buffer_capacity") => {
            cfg.buffer_capacity = intv(value, origin, section, key)?
        }
        ("training", "learning_start") => cfg.learning_start = intv(value, origin, section, key)?,
        ("training", "total_timesteps") => {
            cfg.total_timesteps = intv(value, origin, section, key)?
        }
        ("training", "train_frequency") => {
            cfg.train_frequency = intv(value, origin, section, key)?
        }
        ("training", "n_envs") => {
            cfg.n_envs = intv(value, origin, section, key)?;
            resize_seeds(&mut cfg.env_seeds, cfg.n_envs);
        }
        ("training", "conv_channels") => {
            cfg.agent.net.conv_channels = list_usize::<3>(value, origin, section, key)?
        }
        ("training", "fc_width") => cfg.agent.net.fc_width = intv(value, origin, section, key)?,
        ("training", "state_scale") => {
            cfg.agent.state_scale = list_f64::<8>(value, origin, section, key)?
        }

        ("reward", "eta_r") => cfg.env.reward.eta_r = f(value)?,
        ("reward", "eta_p") => cfg.env.reward.eta_p = f(value)?,
        ("reward", "eta_o") => cfg.env.reward.eta_o = f(value)?,
        ("reward", "d_s") => cfg.env.reward.d_s = f(value)?,
        ("reward", "goal_reward") => cfg.env.reward.goal_reward = f(value)?,
        ("reward", "crash_penalty") => cfg.env.reward.crash_penalty = f(value)?,
        ("reward", "oob_penalty") => cfg.env.reward.oob_penalty = f(value)?,

        ("noise", "p_sp") => cfg.env.noise.p_sp = f(value)?,
        ("noise", "mu_g") => cfg.env.noise.mu_g = f(value)?,
        ("noise", "sigma_g") => cfg.env.noise.sigma_g = f(value)?,
        ("noise", "k_mb") => cfg.env.noise.k_mb = intv(value, origin, section, key)?,
        ("noise", "mu_s") => cfg.env.noise.mu_s = f(value)?,
        ("noise", "sigma_s") => cfg.env.noise.sigma_s = f(value)?,
        ("noise", "state_clip") => cfg.env.noise.state_clip = f(value)?,

        ("orchestrator", "mode") => {
            cfg.mode = match value {
                "lockstep" => ExecMode::Lockstep,
                "async" => ExecMode::Async,
                _ => return Err(bad(format!("`{value}` is not `lockstep` or `async`"))),
            }
        }
        ("orchestrator", "snapshot_interval") => {
            cfg.snapshot_interval = intv(value, origin, section, key)?
        }
        ("orchestrator", "eval_interval") => cfg.eval_interval = intv(value, origin, section, key)?,
        ("orchestrator", "eval_episodes") => cfg.eval_episodes = intv(value, origin, section, key)?,
        ("orchestrator", "eval_seed") => cfg.eval_seed = intv(value, origin, section, key)?,
        ("orchestrator", "agent_seed") => cfg.agent_seed = intv(value, origin, section, key)?,
        ("orchestrator", "env_seeds") => {
            let seeds: Vec<u64> = value
                .split_whitespace()
                .map(|p| intv(p, origin, section, key))
                .collect::<Result<_, _>>()?;
            if seeds.is_empty() {
                return Err(bad("needs at least one seed".into()));
            }
            cfg.n_envs = seeds.len();
            cfg.env_seeds = seeds;
        }
        ("orchestrator", "symmetric_critic") => cfg.agent.symmetric_critic = b(value)?,

        _ => {
            return Err(ConfigError::UnknownKey {
                origin: origin.into(),
                section: section.into(),
                key: key.into(),
            })
        }
    }
    Ok(())
}

/// Canonical text form. Parsing the output reproduces `cfg` exactly (floats
/// print in shortest round-trip form; the camera FOV is emitted in radians).
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let w = &mut s;
    let field = &cfg.env.field;
    let _ = writeln!(w, "[environment]");
    let _ = writeln!(w, "x_min = {}", field.bounds.x[0]);
    let _ = writeln!(w, "x_max = {}", field.bounds.x[1]);
    let _ = writeln!(w, "y_min = {}", field.bounds.y[0]);
    let _ = writeln!(w, "y_max = {}", field.bounds.y[1]);
    let _ = writeln!(w, "z_min = {}", field.bounds.z[0]);
    let _ = writeln!(w, "z_max = {}", field.bounds.z[1]);
    let _ = writeln!(w, "obstacle_count = {}", field.count);
    let _ = writeln!(w, "field_seed = {}", cfg.env.field_seed);
    let _ = writeln!(w, "obstacle_radius = {}", field.radius);
    let _ = writeln!(w, "obstacle_height = {}", field.height);
    let _ = writeln!(w, "disc_radius = {}", field.disc_radius);
    let _ = writeln!(w, "clearance = {}", field.clearance);
    let _ = writeln!(w, "start_x = {}", field.start_xy[0]);
    let _ = writeln!(w, "start_y = {}", field.start_xy[1]);
    let _ = writeln!(w, "start_z = {}", cfg.env.start[2]);
    let _ = writeln!(w, "goal_ring_radius = {}", field.goal_ring_radius);
    let _ = writeln!(w, "goal_height = {}", cfg.env.goal_height);
    let _ = writeln!(w, "accept_radius = {}", cfg.env.rules.accept_radius);
    let _ = writeln!(w, "crash_distance = {}", cfg.env.rules.crash_distance);
    let _ = writeln!(w, "max_episode_steps = {}", cfg.env.rules.max_episode_steps);
    let _ = writeln!(w, "cam_hfov_rad = {}", cfg.env.cam.hfov);
    let _ = writeln!(w, "cam_res_h = {}", cfg.env.cam.res_h);
    let _ = writeln!(w, "cam_res_w = {}", cfg.env.cam.res_w);
    let _ = writeln!(w, "cam_d_max = {}", cfg.env.cam.d_max);
    let _ = writeln!(w);
    let _ = writeln!(w, "[dynamics]");
    let _ = writeln!(w, "dt = {}", cfg.env.dt);
    let _ = writeln!(w, "vx_max = {}", cfg.env.limits.vx_max);
    let _ = writeln!(w, "vy_max = {}", cfg.env.limits.vy_max);
    let _ = writeln!(w, "vz_max = {}", cfg.env.limits.vz_max);
    let _ = writeln!(w, "yaw_rate_max = {}", cfg.env.limits.yaw_rate_max);
    let mode = match cfg.env.action_mode {
        ActionMode::WorldFrame4 => "4d",
        ActionMode::BodyFrame3 => "3d",
    };
    let _ = writeln!(w, "action_mode = {mode}");
    let _ = writeln!(w);
    let _ = writeln!(w, "[training]");
    let _ = writeln!(w, "gamma = {}", cfg.agent.gamma);
    let _ = writeln!(w, "tau = {}", cfg.agent.tau);
    let _ = writeln!(w, "lr = {}", cfg.agent.adam.lr);
    let _ = writeln!(w, "adam_beta1 = {}", cfg.agent.adam.beta1);
    let _ = writeln!(w, "adam_beta2 = {}", cfg.agent.adam.beta2);
    let _ = writeln!(w, "adam_eps = {}", cfg.agent.adam.eps);
    let _ = writeln!(w, "policy_delay = {}", cfg.agent.policy_delay);
    let _ = writeln!(w, "smoothing_sigma = {}", cfg.agent.smoothing_sigma);
    let _ = writeln!(w, "smoothing_clip = {}", cfg.agent.smoothing_clip);
    let _ = writeln!(w, "exploration_sigma = {}", cfg.agent.exploration_sigma);
    let _ = writeln!(w, "batch_size = {}", cfg.agent.batch_size);
    let _ = writeln!(w, "buffer_capacity = {}", cfg.buffer_capacity);
    let _ = writeln!(w, "learning_start = {}", cfg.learning_start);
    let _ = writeln!(w, "total_timesteps = {}", cfg.total_timesteps);
    let _ = writeln!(w, "train_frequency = {}", cfg.train_frequency);
    let _ = writeln!(w, "n_envs = {}", cfg.n_envs);
    let cc = cfg.agent.net.conv_channels;
    let _ = writeln!(w, "conv_channels = {} {} {}", cc[0], cc[1], cc[2]);
    let _ = writeln!(w, "fc_width = {}", cfg.agent.net.fc_width);
    let ss: Vec<String> = cfg.agent.state_scale.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(w, "state_scale = {}", ss.join(" "));
    let _ = writeln!(w);
    let _ = writeln!(w, "[reward]");
    let _ = writeln!(w, "eta_r = {}", cfg.env.reward.eta_r);
    let _ = writeln!(w, "eta_p = {}", cfg.env.reward.eta_p);
    let _ = writeln!(w, "eta_o = {}", cfg.env.reward.eta_o);
    let _ = writeln!(w, "d_s = {}", cfg.env.reward.d_s);
    let _ = writeln!(w, "goal_reward = {}", cfg.env.reward.goal_reward);
    let _ = writeln!(w, "crash_penalty = {}", cfg.env.reward.crash_penalty);
    let _ = writeln!(w, "oob_penalty = {}", cfg.env.reward.oob_penalty);
    let _ = writeln!(w);
    let _ = writeln!(w, "[noise]");
    let _ = writeln!(w, "p_sp = {}", cfg.env.noise.p_sp);
    let _ = writeln!(w, "mu_g = {}", cfg.env.noise.mu_g);
    let _ = writeln!(w, "sigma_g = {}", cfg.env.noise.sigma_g);
    let _ = writeln!(w, "k_mb = {}", cfg.env.noise.k_mb);
    let _ = writeln!(w, "mu_s = {}", cfg.env.noise.mu_s);
    let _ = writeln!(w, "sigma_s = {}", cfg.env.noise.sigma_s);
    let _ = writeln!(w, "state_clip = {}", cfg.env.noise.state_clip);
    let _ = writeln!(w);
    let _ = writeln!(w, "[orchestrator]");
    let mode = match cfg.mode {
        ExecMode::Lockstep => "lockstep",
        ExecMode::Async => "async",
    };
    let _ = writeln!(w, "mode = {mode}");
    let _ = writeln!(w, "snapshot_interval = {}", cfg.snapshot_interval);
    let _ = writeln!(w, "eval_interval = {}", cfg.eval_interval);
    let _ = writeln!(w, "eval_episodes = {}", cfg.eval_episodes);
    let _ = writeln!(w, "eval_seed = {}", cfg.eval_seed);
    let _ = writeln!(w, "agent_seed = {}", cfg.agent_seed);
    let seeds: Vec<String> = cfg.env_seeds.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(w, "env_seeds = {}", seeds.join(" "));
    let _ = writeln!(w, "symmetric_critic = {}", cfg.agent.symmetric_critic);
    s
}
