//! End-to-end training: N collection workers feeding one shared replay
//! buffer, a single learner, periodic held-out evaluation, and artifact
//! emission (metrics stream, per-episode records, trajectories, checkpoint,
//! report).
//!
//! Two execution modes share every worker/learner/eval code path. Lockstep
//! round-robins the workers and the learner on one thread and is
//! bit-deterministic for fixed seeds; async runs each worker on its own
//! thread and is statistically equivalent but not bit-reproducible. Workers
//! acquire step credits from one atomic counter, so the total number of
//! pushed transitions equals the configured step budget in both modes.

pub mod metrics;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use aeronav_nn::{Network, ParamSet};

use crate::agent::{policy_act, Agent, AgentConfig, AgentError, NetProfile};
use crate::env::{EnvConfig, EnvError, NavEnv};
use crate::replay::{ReplayError, SharedReplay, Transition};
use crate::sensing::Observation;
use crate::vehicle::{ActionMode, EpisodeEvent};
use crate::world::FieldSpec;

use metrics::{
    compute_metrics, write_jsonl, write_trajectory, EpisodeRecord, MetricsPoint, TrajectoryPoint,
};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid run config: {0}")]
    InvalidRun(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("orchestrator io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("worker thread panicked")]
    WorkerPanic,
}

/// Worker/learner scheduling discipline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Lockstep,
    Async,
}

/// One full training run: environments, learner, schedule, and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub n_envs: usize,
    pub env_seeds: Vec<u64>,
    pub eval_seed: u64,
    pub agent_seed: u64,
    pub total_timesteps: u64,
    /// Global steps collected with the uniform random policy before any
    /// gradient update.
    pub learning_start: u64,
    /// Learner steps per aggregated environment round (one step of every
    /// worker).
    pub train_frequency: u64,
    pub buffer_capacity: usize,
    /// Learner publish cadence and worker refresh cadence for actor
    /// snapshots, in the publisher's/consumer's own steps.
    pub snapshot_interval: u64,
    /// Global steps between held-out evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub mode: ExecMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            n_envs: 3,
            env_seeds: vec![1, 2, 3],
            eval_seed: 1000,
            agent_seed: 0,
            total_timesteps: 330_000,
            learning_start: 2000,
            train_frequency: 1,
            buffer_capacity: 50_000,
            snapshot_interval: 100,
            eval_interval: 10_000,
            eval_episodes: 30,
            mode: ExecMode::Lockstep,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::InvalidRun(m));
        self.env.validate()?;
        self.agent.validate()?;
        if self.n_envs == 0 {
            return bad("n_envs must be at least 1".into());
        }
        if self.env_seeds.len() != self.n_envs {
            return bad(format!(
                "{} env seeds for {} environments",
                self.env_seeds.len(),
                self.n_envs
            ));
        }
        let mut seen = self.env_seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.env_seeds.len() {
            return bad("env seeds must be distinct".into());
        }
        if self.env_seeds.contains(&self.eval_seed) {
            return bad("eval seed must differ from every training seed".into());
        }
        // equality is the degenerate all-random smoke run: zero learner steps
        if self.total_timesteps < self.learning_start {
            return bad("total_timesteps must not be below learning_start".into());
        }
        if self.train_frequency == 0 || self.snapshot_interval == 0 || self.eval_interval == 0 {
            return bad("train_frequency, snapshot_interval, eval_interval must be positive".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive".into());
        }
        if self.buffer_capacity < self.agent.batch_size {
            return bad("buffer capacity smaller than one batch".into());
        }
        if self.env.action_mode != self.agent.action_mode {
            return bad("env and agent disagree on the action mode".into());
        }
        if (self.env.cam.res_h, self.env.cam.res_w) != (self.agent.net.image_h, self.agent.net.image_w)
        {
            return bad("camera resolution differs from the network's input size".into());
        }
        Ok(())
    }

    /// Scaled-down configuration for acceptance experiments: a 30 m obstacle
    /// disc with 15 cylinders, goals on a 20 m circle, 300-step episodes,
    /// 60k total steps, and a proportionally smaller network/image.
    pub fn desk_preset() -> Self {
        let mut cfg = RunConfig::default();
        cfg.env.field = FieldSpec {
            count: 15,
            radius: 2.5,
            height: 15.0,
            disc_radius: 30.0,
            clearance: 2.0,
            start_xy: [0.0, 0.0],
            goal_ring_radius: 20.0,
            ..FieldSpec::default()
        };
        cfg.env.field.bounds.x = [-35.0, 35.0];
        cfg.env.field.bounds.y = [-35.0, 35.0];
        cfg.env.rules.max_episode_steps = 300;
        cfg.env.cam.res_h = 12;
        cfg.env.cam.res_w = 16;
        cfg.agent.net = NetProfile { image_h: 12, image_w: 16, conv_channels: [4, 6, 8], fc_width: 32 };
        cfg.agent.batch_size = 32;
        cfg.agent.state_scale = [20.0, 20.0, 15.0, 3.0, 3.0, 2.0, std::f64::consts::PI, 0.3];
        cfg.env_seeds = vec![11, 12, 13];
        cfg.eval_seed = 999;
        cfg.agent_seed = 7;
        cfg.total_timesteps = 60_000;
        cfg.learning_start = 2000;
        cfg.eval_interval = 3000;
        cfg.eval_episodes = 15;
        cfg
    }

    /// Re-seeds the run for repetition `rep`, keeping the evaluation field
    /// fixed so repetitions stay comparable.
    pub fn with_seeds(mut self, rep: u64) -> Self {
        self.env_seeds = (0..self.n_envs as u64).map(|i| 1000 * (rep + 1) + i).collect();
        self.agent_seed = 500 + rep;
        self
    }

    /// Single-environment variant (same step budget, one collector).
    pub fn with_single_env(mut self) -> Self {
        self.n_envs = 1;
        self.env_seeds.truncate(1);
        self
    }

    /// Symmetric baseline: critics read the corrupted observation too.
    pub fn with_symmetric_critic(mut self) -> Self {
        self.agent.symmetric_critic = true;
        self
    }

    /// Reduced action-space variant.
    pub fn with_body_frame_actions(mut self) -> Self {
        self.env.action_mode = ActionMode::BodyFrame3;
        self.agent.action_mode = ActionMode::BodyFrame3;
        self
    }
}

/// Evaluation result: the aggregate point, per-episode records, and one
/// trajectory per episode.
pub struct EvalOutput {
    pub point: MetricsPoint,
    pub records: Vec<EpisodeRecord>,
    pub trajectories: Vec<Vec<TrajectoryPoint>>,
}

/// Runs `n_episodes` with the deterministic policy on a fresh environment
/// built from `eval_seed`. Rebuilding per call pins the goal sequence, so
/// successive evaluations are directly comparable; the policy sees corrupted
/// observations — the deployment condition.
pub fn evaluate(
    actor_net: &Network,
    actor: &ParamSet,
    agent_cfg: &AgentConfig,
    env_cfg: &EnvConfig,
    eval_seed: u64,
    n_episodes: usize,
    at_step: u64,
) -> Result<EvalOutput, OrchestratorError> {
    let mut env = NavEnv::new(eval_seed, env_cfg.clone())?;
    // explore=false never draws from this
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    let mut records = Vec::with_capacity(n_episodes);
    let mut trajectories = Vec::with_capacity(n_episodes);
    for episode in 0..n_episodes {
        let (_, mut corrupt) = env.reset();
        let v = *env.vehicle();
        let mut traj = vec![TrajectoryPoint {
            t: 0,
            x: v.position[0],
            y: v.position[1],
            z: v.position[2],
            yaw: v.yaw,
            d_o: env.obstacle_distance(),
            reward: 0.0,
            event: EpisodeEvent::Running,
        }];
        let mut total = 0.0;
        let (outcome, steps) = loop {
            let a = policy_act(actor_net, actor, agent_cfg, &corrupt, false, &mut rng)?;
            let sr = env.step(&a)?;
            total += sr.reward;
            let v = *env.vehicle();
            traj.push(TrajectoryPoint {
                t: env.step_index(),
                x: v.position[0],
                y: v.position[1],
                z: v.position[2],
                yaw: v.yaw,
                d_o: sr.d_o,
                reward: sr.reward,
                event: sr.event,
            });
            if sr.event.ends_episode() {
                break (sr.event, env.step_index());
            }
            corrupt = sr.corrupt_obs;
        };
        records.push(EpisodeRecord { step: at_step, episode, outcome, steps, reward: total });
        trajectories.push(traj);
    }
    Ok(EvalOutput { point: compute_metrics(at_step, &records), records, trajectories })
}

/// Atomically swapped actor snapshot plus the learner step it was taken at.
struct SnapshotCell {
    slot: RwLock<(Arc<ParamSet>, u64)>,
}

impl SnapshotCell {
    fn new(initial: ParamSet) -> Self {
        SnapshotCell { slot: RwLock::new((Arc::new(initial), 0)) }
    }

    fn publish(&self, params: &ParamSet, learner_step: u64) {
        *self.slot.write().expect("snapshot lock") = (Arc::new(params.clone()), learner_step);
    }

    fn get(&self) -> (Arc<ParamSet>, u64) {
        let g = self.slot.read().expect("snapshot lock");
        (g.0.clone(), g.1)
    }
}

/// State shared by every worker and the learner, in both modes.
struct Shared {
    replay: SharedReplay,
    cell: SnapshotCell,
    step_counter: AtomicU64,
    learner_steps: AtomicU64,
    actor_net: Network,
    agent_cfg: AgentConfig,
    total: u64,
    learning_start: u64,
    snapshot_interval: u64,
}

/// One collection worker: its environment, RNG stream, current observation
/// pair, and actor snapshot.
struct Worker {
    id: usize,
    env: NavEnv,
    rng: ChaCha8Rng,
    pending: Option<(Observation, Observation)>,
    snapshot: Arc<ParamSet>,
    steps: u64,
    episodes: u64,
    max_staleness: u64,
}

enum Tick {
    Stepped,
    Done,
}

/// Claims one step credit and converts it into exactly one pushed
/// transition. Simulator errors abort the episode (log + reset) and the
/// credit is retried on a fresh episode.
fn worker_tick(w: &mut Worker, sh: &Shared) -> Result<Tick, OrchestratorError> {
    let s = sh.step_counter.fetch_add(1, Ordering::SeqCst);
    if s >= sh.total {
        return Ok(Tick::Done);
    }
    let dims = sh.agent_cfg.action_dim();
    let mut attempts = 0;
    let transition = loop {
        let (prev_priv, prev_corrupt) = match w.pending.take() {
            Some(pair) => pair,
            None => {
                w.episodes += 1;
                w.env.reset()
            }
        };
        let action: Vec<f64> = if s < sh.learning_start {
            (0..dims).map(|_| w.rng.random_range(-1.0..=1.0)).collect()
        } else {
            policy_act(&sh.actor_net, &w.snapshot, &sh.agent_cfg, &prev_corrupt, true, &mut w.rng)?
        };
        match w.env.step(&action) {
            Ok(sr) => {
                if !sr.event.ends_episode() {
                    w.pending = Some((sr.priv_obs.clone(), sr.corrupt_obs.clone()));
                }
                break Transition {
                    priv_obs: prev_priv,
                    corrupt_obs: prev_corrupt,
                    action,
                    reward: sr.reward,
                    next_priv_obs: sr.priv_obs,
                    next_corrupt_obs: sr.corrupt_obs,
                    terminal: sr.terminal,
                    truncated: sr.truncated,
                };
            }
            Err(e) => {
                attempts += 1;
                eprintln!("worker {}: episode aborted ({e}); resetting", w.id);
                if attempts > 3 {
                    return Err(e.into());
                }
                w.pending = None;
            }
        }
    };
    sh.replay.push(transition)?;
    w.steps += 1;
    if w.steps % sh.snapshot_interval == 0 {
        let (params, stamp) = sh.cell.get();
        let lag = sh.learner_steps.load(Ordering::SeqCst).saturating_sub(stamp);
        w.max_staleness = w.max_staleness.max(lag);
        w.snapshot = params;
    }
    Ok(Tick::Stepped)
}

struct Learner {
    agent: Agent,
    rng: ChaCha8Rng,
    steps: u64,
}

/// One learner step if a batch is available. Publishes an actor snapshot
/// every `snapshot_interval` of its own steps.
fn learner_tick(ls: &mut Learner, sh: &Shared) -> Result<bool, OrchestratorError> {
    let batch = match sh.replay.sample(ls.agent.cfg.batch_size, &mut ls.rng) {
        Ok(b) => b,
        Err(ReplayError::Insufficient { .. }) => return Ok(false),
        Err(e) => return Err(e.into()),
    };
    ls.agent.train_step(&batch, &mut ls.rng)?;
    ls.steps += 1;
    sh.learner_steps.store(ls.steps, Ordering::SeqCst);
    if ls.steps % sh.snapshot_interval == 0 {
        sh.cell.publish(&ls.agent.actor, ls.steps);
    }
    Ok(true)
}

/// Learner steps a run performs: `train_frequency` per aggregated
/// environment step past `learning_start`, identical in both modes and
/// independent of how many workers contributed the steps.
fn learner_budget(cfg: &RunConfig) -> u64 {
    (cfg.total_timesteps - cfg.learning_start) * cfg.train_frequency
}

/// Everything a finished collection/learning phase hands back to `train`.
struct TrainCore {
    agent: Agent,
    curves: Vec<MetricsPoint>,
    records: Vec<EpisodeRecord>,
    pushed: u64,
    episodes: u64,
    max_staleness: u64,
}

fn build_workers(cfg: &RunConfig) -> Result<Vec<Worker>, OrchestratorError> {
    cfg.env_seeds
        .iter()
        .enumerate()
        .map(|(id, &seed)| {
            let env = NavEnv::new(seed, cfg.env.clone())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2); // the env itself draws on stream 1
            Ok(Worker {
                id,
                env,
                rng,
                pending: None,
                snapshot: Arc::new(ParamSet::zeros(0, 0)), // replaced before use
                steps: 0,
                episodes: 0,
                max_staleness: 0,
            })
        })
        .collect()
}

fn build_shared(cfg: &RunConfig, agent: &Agent) -> Shared {
    Shared {
        replay: SharedReplay::new(cfg.buffer_capacity),
        cell: SnapshotCell::new(agent.actor.clone()),
        step_counter: AtomicU64::new(0),
        learner_steps: AtomicU64::new(0),
        actor_net: agent.actor_net.clone(),
        agent_cfg: agent.cfg.clone(),
        total: cfg.total_timesteps,
        learning_start: cfg.learning_start,
        snapshot_interval: cfg.snapshot_interval,
    }
}

/// Single-thread round-robin: every worker steps once, then the learner
/// catches up to its aggregated-step schedule, then due evaluations fire.
/// Bit-deterministic.
fn run_lockstep(cfg: &RunConfig) -> Result<TrainCore, OrchestratorError> {
    let agent = Agent::new(cfg.agent.clone(), cfg.agent_seed)?;
    let sh = build_shared(cfg, &agent);
    let mut workers = build_workers(cfg)?;
    for w in &mut workers {
        w.snapshot = sh.cell.get().0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.agent_seed);
    rng.set_stream(3);
    let mut ls = Learner { agent, rng, steps: 0 };
    let target_updates = learner_budget(cfg);

    let mut curves = Vec::new();
    let mut records = Vec::new();
    let mut gs: u64 = 0;
    let mut next_eval = cfg.eval_interval;
    'outer: loop {
        let mut done = false;
        for w in workers.iter_mut() {
            match worker_tick(w, &sh)? {
                Tick::Stepped => gs += 1,
                Tick::Done => {
                    done = true;
                    break;
                }
            }
        }
        if gs >= cfg.learning_start {
            // catch up to the aggregated-step schedule: one learner step per
            // `train_frequency` of every post-start environment step
            let due = ((gs - cfg.learning_start) * cfg.train_frequency).min(target_updates);
            while ls.steps < due {
                if !learner_tick(&mut ls, &sh)? {
                    break;
                }
            }
        }
        while gs >= next_eval && next_eval < cfg.total_timesteps {
            let out = evaluate(
                &ls.agent.actor_net,
                &ls.agent.actor,
                &ls.agent.cfg,
                &cfg.env,
                cfg.eval_seed,
                cfg.eval_episodes,
                next_eval,
            )?;
            curves.push(out.point);
            records.extend(out.records);
            next_eval += cfg.eval_interval;
        }
        if done || gs >= cfg.total_timesteps {
            break 'outer;
        }
    }
    Ok(TrainCore {
        agent: ls.agent,
        curves,
        records,
        pushed: sh.replay.pushed(),
        episodes: workers.iter().map(|w| w.episodes).sum(),
        max_staleness: workers.iter().map(|w| w.max_staleness).max().unwrap_or(0),
    })
}

/// Threaded mode: one thread per worker, learner plus evaluation on the
/// calling thread. Work division matches lockstep (same credit counter, same
/// learner budget); the interleaving is whatever the scheduler gives us.
fn run_async(cfg: &RunConfig) -> Result<TrainCore, OrchestratorError> {
    let agent = Agent::new(cfg.agent.clone(), cfg.agent_seed)?;
    let sh = build_shared(cfg, &agent);
    let mut workers = build_workers(cfg)?;
    for w in &mut workers {
        w.snapshot = sh.cell.get().0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.agent_seed);
    rng.set_stream(3);
    let mut ls = Learner { agent, rng, steps: 0 };

    let target_updates = learner_budget(cfg);

    let mut curves = Vec::new();
    let mut records = Vec::new();
    let mut worker_stats: Vec<(u64, u64)> = Vec::new(); // (episodes, staleness)

    std::thread::scope(|scope| -> Result<(), OrchestratorError> {
        let mut handles = Vec::new();
        for mut w in workers.drain(..) {
            let sh = &sh;
            handles.push(scope.spawn(move || -> Result<Worker, OrchestratorError> {
                loop {
                    match worker_tick(&mut w, sh)? {
                        Tick::Stepped => {}
                        Tick::Done => return Ok(w),
                    }
                }
            }));
        }

        let mut next_eval = cfg.eval_interval;
        loop {
            let gs = sh.step_counter.load(Ordering::SeqCst).min(cfg.total_timesteps);
            let stepped = if gs >= cfg.learning_start && ls.steps < target_updates {
                learner_tick(&mut ls, &sh)?
            } else {
                false
            };
            while gs >= next_eval && next_eval < cfg.total_timesteps {
                let out = evaluate(
                    &ls.agent.actor_net,
                    &ls.agent.actor,
                    &ls.agent.cfg,
                    &cfg.env,
                    cfg.eval_seed,
                    cfg.eval_episodes,
                    next_eval,
                )?;
                curves.push(out.point);
                records.extend(out.records);
                next_eval += cfg.eval_interval;
            }
            let drained = gs >= cfg.total_timesteps;
            if drained && (ls.steps >= target_updates || !stepped) {
                break;
            }
            if !stepped {
                std::thread::sleep(std::time::Duration::from_micros(200));
            }
        }

        for h in handles {
            let w = h.join().map_err(|_| OrchestratorError::WorkerPanic)??;
            worker_stats.push((w.episodes, w.max_staleness));
        }
        Ok(())
    })?;

    Ok(TrainCore {
        agent: ls.agent,
        curves,
        records,
        pushed: sh.replay.pushed(),
        episodes: worker_stats.iter().map(|s| s.0).sum(),
        max_staleness: worker_stats.iter().map(|s| s.1).max().unwrap_or(0),
    })
}

/// Run summary serialized next to the artifacts it names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: RunConfig,
    pub curves: Vec<MetricsPoint>,
    pub final_eval: MetricsPoint,
    pub total_env_steps: u64,
    pub transitions_pushed: u64,
    pub learner_steps: u64,
    pub actor_updates: u64,
    pub episodes_started: u64,
    /// Worst snapshot lag observed at any worker refresh, learner steps.
    pub max_snapshot_staleness: u64,
    pub checkpoint_file: String,
    pub metrics_file: String,
    pub episodes_file: String,
}

/// Runs the full pipeline and writes `metrics.jsonl`, `episodes.jsonl`,
/// final-evaluation trajectories, the agent checkpoint, and `report.json`
/// into `out_dir`.
pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainingReport, OrchestratorError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;

    let mut core = match cfg.mode {
        ExecMode::Lockstep => run_lockstep(cfg)?,
        ExecMode::Async => run_async(cfg)?,
    };

    // the final evaluation always lands exactly on the step budget
    let final_out = evaluate(
        &core.agent.actor_net,
        &core.agent.actor,
        &core.agent.cfg,
        &cfg.env,
        cfg.eval_seed,
        cfg.eval_episodes,
        cfg.total_timesteps,
    )?;
    core.curves.push(final_out.point.clone());
    core.records.extend(final_out.records);

    let mut f = fs::File::create(out_dir.join("metrics.jsonl"))?;
    write_jsonl(&mut f, &core.curves)?;
    let mut f = fs::File::create(out_dir.join("episodes.jsonl"))?;
    write_jsonl(&mut f, &core.records)?;
    let traj_dir = out_dir.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    for (i, traj) in final_out.trajectories.iter().enumerate() {
        let mut f = fs::File::create(traj_dir.join(format!("ep_{i:03}.txt")))?;
        write_trajectory(&mut f, traj)?;
    }
    crate::agent::save_agent(&out_dir.join("agent.ckpt"), &core.agent)?;

    let report = TrainingReport {
        config: cfg.clone(),
        curves: core.curves,
        final_eval: final_out.point,
        total_env_steps: cfg.total_timesteps,
        transitions_pushed: core.pushed,
        learner_steps: core.agent.critic_updates,
        actor_updates: core.agent.actor_updates,
        episodes_started: core.episodes,
        max_snapshot_staleness: core.max_staleness,
        checkpoint_file: "agent.ckpt".into(),
        metrics_file: "metrics.jsonl".into(),
        episodes_file: "episodes.jsonl".into(),
    };
    let mut f = fs::File::create(out_dir.join("report.json"))?;
    let json = serde_json::to_string_pretty(&report)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(report)
}
