//! Asymmetric twin-critic learner.
//!
//! The policy acts on the corrupted observation — the only thing available
//! at deployment — while both critics (and their targets) score state-action
//! pairs on the clean, privileged observation. Stability machinery: clipped
//! double-Q bootstraps, target policy smoothing, delayed policy updates, and
//! soft target blending. A config switch feeds the critics the corrupted
//! observation instead, which collapses the learner to the symmetric
//! baseline used for comparison.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use aeronav_nn::{
    adam_step, fnv1a64, read_paramset, write_paramset, AdamHyper, Grads, LayerSpec, Mode,
    Network, NetworkSpec, NnError, ParamSet,
};

use crate::replay::Transition;
use crate::sensing::Observation;
use crate::vehicle::ActionMode;

/// Self-state feature count: goal offset (3), velocity (3), relative goal
/// bearing, yaw rate.
pub const STATE_DIM: usize = 8;

const LEAKY_SLOPE: f64 = 0.01;

/// Weight of the pre-clip excess penalty in the policy loss. The action
/// clip's subgradient vanishes outside [−1,1], so a saturated linear output
/// head would otherwise never see another gradient; the penalty restores a
/// pull back to the boundary, where the Q-gradient takes over again.
const PRECLIP_PENALTY: f64 = 1.0;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("privileged observation reached a deployment-side path")]
    PrivilegedLeak,
    #[error("corrupted observation reached a privileged-only path")]
    CorruptedLeak,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("agent checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad agent checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Convolutional tower and head widths. The default is the full-scale
/// production profile; scaled-down profiles keep every property of the
/// architecture while fitting tight compute budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetProfile {
    pub image_h: usize,
    pub image_w: usize,
    pub conv_channels: [usize; 3],
    pub fc_width: usize,
}

impl Default for NetProfile {
    fn default() -> Self {
        NetProfile {
            image_h: 80,
            image_w: 100,
            conv_channels: [8, 16, 25],
            fc_width: 128,
        }
    }
}

/// Learner hyperparameters plus the structural switches (action encoding,
/// critic privilege, network profile). The config fully determines both
/// network specs, so it doubles as the checkpoint compatibility key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    /// Std-dev of target policy smoothing noise, normalized action units.
    pub smoothing_sigma: f64,
    /// Clip bound for the smoothing noise.
    pub smoothing_clip: f64,
    /// Std-dev of exploration noise added by workers, normalized units.
    pub exploration_sigma: f64,
    pub batch_size: usize,
    pub adam: AdamHyper,
    /// When set, critics read the corrupted observation like the actor does
    /// (the symmetric baseline); privileged inputs are the default.
    pub symmetric_critic: bool,
    pub action_mode: ActionMode,
    pub net: NetProfile,
    /// Per-feature divisors bringing the self-state roughly into [−1, 1]:
    /// goal offsets, velocities, bearing error, yaw rate.
    pub state_scale: [f64; STATE_DIM],
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            smoothing_sigma: 0.2,
            smoothing_clip: 0.5,
            exploration_sigma: 0.1,
            batch_size: 128,
            adam: AdamHyper::default(),
            symmetric_critic: false,
            action_mode: ActionMode::WorldFrame4,
            net: NetProfile::default(),
            state_scale: [65.0, 65.0, 15.0, 3.0, 3.0, 2.0, std::f64::consts::PI, 0.3],
        }
    }
}

impl AgentConfig {
    pub fn action_dim(&self) -> usize {
        self.action_mode.dims()
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0,1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0,1]");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1");
        }
        if self.smoothing_sigma < 0.0 || self.smoothing_clip < 0.0 || self.exploration_sigma < 0.0
        {
            return bad("noise scales must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !self.state_scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return bad("state_scale entries must be positive");
        }
        Ok(())
    }
}

fn conv_block(out_channels: usize) -> [LayerSpec; 4] {
    [
        LayerSpec::Conv2d { kernel: 3, out_channels, stride: 1 },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: 2, stride: 2 },
    ]
}

fn trunk(net: &NetProfile) -> Vec<LayerSpec> {
    let mut t = Vec::with_capacity(13);
    for &c in &net.conv_channels {
        t.extend_from_slice(&conv_block(c));
    }
    t.push(LayerSpec::GlobalAvgPool);
    t
}

fn head(fc: usize, out: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::FullyConnected { out: fc },
        LayerSpec::LeakyRelu { slope: LEAKY_SLOPE },
        LayerSpec::FullyConnected { out: fc },
        LayerSpec::LeakyRelu { slope: LEAKY_SLOPE },
        LayerSpec::FullyConnected { out },
    ]
}

/// Policy network: depth trunk + self-state, one output per action axis.
pub fn actor_spec(cfg: &AgentConfig) -> NetworkSpec {
    NetworkSpec {
        input: (1, cfg.net.image_h, cfg.net.image_w),
        trunk: trunk(&cfg.net),
        aux_dim: STATE_DIM,
        head: head(cfg.net.fc_width, cfg.action_dim()),
    }
}

/// Value network: same trunk, self-state plus action appended, scalar out.
pub fn critic_spec(cfg: &AgentConfig) -> NetworkSpec {
    NetworkSpec {
        input: (1, cfg.net.image_h, cfg.net.image_w),
        trunk: trunk(&cfg.net),
        aux_dim: STATE_DIM + cfg.action_dim(),
        head: head(cfg.net.fc_width, 1),
    }
}

/// Network-ready view of one observation: depth codes mapped to [0,1] and
/// the self-state divided by the configured scales.
pub struct Features {
    pub image: Vec<f64>,
    pub aux: Vec<f64>,
}

pub fn featurize(obs: &Observation, scale: &[f64; STATE_DIM]) -> Features {
    let image = obs.depth.codes.iter().map(|&c| c as f64 / 255.0).collect();
    let s = &obs.state;
    let raw = [s.d[0], s.d[1], s.d[2], s.v[0], s.v[1], s.v[2], s.dpsi, s.yaw_rate];
    let aux = raw.iter().zip(scale.iter()).map(|(r, k)| r / k).collect();
    Features { image, aux }
}

/// Evaluates the deterministic policy on one corrupted observation and
/// optionally adds clipped exploration noise. Free function so workers can
/// run detached actor snapshots without holding an [`Agent`].
pub fn policy_act(
    net: &Network,
    params: &ParamSet,
    cfg: &AgentConfig,
    obs: &Observation,
    explore: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, AgentError> {
    if obs.privileged {
        return Err(AgentError::PrivilegedLeak);
    }
    let f = featurize(obs, &cfg.state_scale);
    let (raw, _, _) = net.forward(params, &f.image, &f.aux, 1, Mode::Eval)?;
    let mut a: Vec<f64> = raw.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    if explore && cfg.exploration_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.exploration_sigma).expect("validated sigma");
        for v in &mut a {
            *v = (*v + noise.sample(rng)).clamp(-1.0, 1.0);
        }
    }
    Ok(a)
}

/// Intermediate values of one TD-target evaluation, exposed so tests can
/// check the smoothing-clip and min-selection properties directly.
pub struct TdDetail {
    pub y: Vec<f64>,
    /// Smoothed target-policy actions, row-major `n × action_dim`.
    pub a_prime: Vec<f64>,
    /// Clipped smoothing noise actually applied, same layout.
    pub noise: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
}

/// One critic's forward/backward evaluation against a fixed target vector.
pub struct CriticEval {
    pub loss: f64,
    pub q: Vec<f64>,
    pub grads: Grads,
    /// Batchnorm running stats refreshed by the train-mode forward; committed
    /// only by [`Agent::critic_update`].
    pub new_buffers: Vec<f64>,
}

/// Actor forward/backward evaluation (policy loss and its gradient).
pub struct ActorEval {
    pub loss: f64,
    pub grads: Grads,
    /// Clipped policy actions for the batch, row-major.
    pub actions: Vec<f64>,
    pub new_buffers: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum CriticId {
    One,
    Two,
}

/// Training-side losses of one learner step; the actor entry is present only
/// on delayed-update steps.
#[derive(Debug, Clone, Copy)]
pub struct TrainStepStats {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
}

/// The six networks plus update counters. Parameter sets stay in flat
/// vectors; the two `Network` values are pure topology and shared by the
/// online and target sides.
pub struct Agent {
    pub cfg: AgentConfig,
    pub actor_net: Network,
    pub critic_net: Network,
    pub actor: ParamSet,
    pub target_actor: ParamSet,
    pub critic1: ParamSet,
    pub critic2: ParamSet,
    pub target_critic1: ParamSet,
    pub target_critic2: ParamSet,
    pub critic_updates: u64,
    pub actor_updates: u64,
}

impl Agent {
    /// Builds the networks and initializes parameters from disjoint seed
    /// streams; targets start as exact copies of their online sources.
    pub fn new(cfg: AgentConfig, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let actor_net = Network::new(actor_spec(&cfg))?;
        let critic_net = Network::new(critic_spec(&cfg))?;
        let actor = actor_net.init_params(seed);
        let critic1 = critic_net.init_params(seed.wrapping_add(1));
        let critic2 = critic_net.init_params(seed.wrapping_add(2));
        Ok(Agent {
            target_actor: actor.clone(),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            cfg,
            actor_net,
            critic_net,
            actor,
            critic1,
            critic2,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    /// Snapshot of the online actor for detached workers.
    pub fn actor_snapshot(&self) -> ParamSet {
        self.actor.clone()
    }

    pub fn select_action(
        &self,
        obs: &Observation,
        explore: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, AgentError> {
        policy_act(&self.actor_net, &self.actor, &self.cfg, obs, explore, rng)
    }

    /// The observation the critics see for the current step of `t`.
    fn critic_obs<'a>(&self, t: &'a Transition) -> &'a Observation {
        if self.cfg.symmetric_critic { &t.corrupt_obs } else { &t.priv_obs }
    }

    fn critic_next_obs<'a>(&self, t: &'a Transition) -> &'a Observation {
        if self.cfg.symmetric_critic { &t.next_corrupt_obs } else { &t.next_priv_obs }
    }

    /// Stacks features for a batch, enforcing the privilege role of every
    /// observation fed to this side of the learner.
    fn stack(
        &self,
        obs: &[&Observation],
        want_privileged: bool,
    ) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
        let mut image = Vec::with_capacity(obs.len() * self.cfg.net.image_h * self.cfg.net.image_w);
        let mut aux = Vec::with_capacity(obs.len() * STATE_DIM);
        for o in obs {
            if o.privileged != want_privileged {
                return Err(if o.privileged {
                    AgentError::PrivilegedLeak
                } else {
                    AgentError::CorruptedLeak
                });
            }
            let f = featurize(o, &self.cfg.state_scale);
            image.extend_from_slice(&f.image);
            aux.extend_from_slice(&f.aux);
        }
        Ok((image, aux))
    }

    /// Appends one action row to each aux row (critic input layout).
    fn append_actions(&self, aux_state: &[f64], actions: &[f64], n: usize) -> Vec<f64> {
        let dims = self.cfg.action_dim();
        debug_assert_eq!(aux_state.len(), n * STATE_DIM);
        debug_assert_eq!(actions.len(), n * dims);
        let mut out = Vec::with_capacity(n * (STATE_DIM + dims));
        for i in 0..n {
            out.extend_from_slice(&aux_state[i * STATE_DIM..(i + 1) * STATE_DIM]);
            out.extend_from_slice(&actions[i * dims..(i + 1) * dims]);
        }
        out
    }

    /// TD target with full intermediates. The target policy runs on the
    /// corrupted next observation; the target critics bootstrap from the
    /// privileged next observation (unless the symmetric switch is on).
    pub fn td_target_detail(
        &self,
        batch: &[Transition],
        rng: &mut ChaCha8Rng,
    ) -> Result<TdDetail, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let n = batch.len();
        let dims = self.cfg.action_dim();
        let next_corrupt: Vec<&Observation> = batch.iter().map(|t| &t.next_corrupt_obs).collect();
        let (img, aux) = self.stack(&next_corrupt, false)?;
        let (raw, _, _) = self
            .actor_net
            .forward(&self.target_actor, &img, &aux, n, Mode::Eval)?;

        let c = self.cfg.smoothing_clip;
        let mut noise = vec![0.0; n * dims];
        if self.cfg.smoothing_sigma > 0.0 {
            let dist = Normal::new(0.0, self.cfg.smoothing_sigma).expect("validated sigma");
            for e in noise.iter_mut() {
                *e = dist.sample(rng).clamp(-c, c);
            }
        }
        let a_prime: Vec<f64> = raw
            .iter()
            .zip(noise.iter())
            .map(|(r, e)| (r.clamp(-1.0, 1.0) + e).clamp(-1.0, 1.0))
            .collect();

        let next_critic: Vec<&Observation> = batch.iter().map(|t| self.critic_next_obs(t)).collect();
        let (cimg, caux_state) = self.stack(&next_critic, !self.cfg.symmetric_critic)?;
        let caux = self.append_actions(&caux_state, &a_prime, n);
        let (q1, _, _) = self
            .critic_net
            .forward(&self.target_critic1, &cimg, &caux, n, Mode::Eval)?;
        let (q2, _, _) = self
            .critic_net
            .forward(&self.target_critic2, &cimg, &caux, n, Mode::Eval)?;

        let y = batch
            .iter()
            .zip(q1.iter().zip(q2.iter()))
            .map(|(t, (a, b))| {
                let bootstrap = if t.terminal { 0.0 } else { self.cfg.gamma * a.min(*b) };
                t.reward + bootstrap
            })
            .collect();
        Ok(TdDetail { y, a_prime, noise, q1, q2 })
    }

    pub fn td_target(
        &self,
        batch: &[Transition],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, AgentError> {
        Ok(self.td_target_detail(batch, rng)?.y)
    }

    /// Forward/backward of one critic against `y`, without mutating anything.
    /// Loss is `mean(½(y − Q)²)`; the gradient passed back is `(Q − y)/n`.
    pub fn critic_eval(
        &self,
        which: CriticId,
        batch: &[Transition],
        y: &[f64],
    ) -> Result<CriticEval, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let n = batch.len();
        assert_eq!(y.len(), n, "target vector length");
        let params = match which {
            CriticId::One => &self.critic1,
            CriticId::Two => &self.critic2,
        };
        let obs: Vec<&Observation> = batch.iter().map(|t| self.critic_obs(t)).collect();
        let (img, aux_state) = self.stack(&obs, !self.cfg.symmetric_critic)?;
        let actions: Vec<f64> = batch.iter().flat_map(|t| t.action.iter().copied()).collect();
        let aux = self.append_actions(&aux_state, &actions, n);
        let (q, cache, new_buffers) =
            self.critic_net.forward(params, &img, &aux, n, Mode::Train)?;
        let cache = cache.expect("train-mode cache");
        let new_buffers = new_buffers.expect("train-mode buffers");
        let mut loss = 0.0;
        let mut grad_out = vec![0.0; n];
        for i in 0..n {
            let e = y[i] - q[i];
            loss += 0.5 * e * e / n as f64;
            grad_out[i] = (q[i] - y[i]) / n as f64;
        }
        if !loss.is_finite() {
            return Err(AgentError::Nn(NnError::NonFinite("critic loss".into())));
        }
        let grads = self.critic_net.backward(params, &cache, &grad_out)?;
        Ok(CriticEval { loss, q, grads, new_buffers })
    }

    /// One learner step for both critics: shared TD target, independent
    /// squared-error gradients, one Adam step each. Returns the mean loss.
    pub fn critic_update(
        &mut self,
        batch: &[Transition],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, AgentError> {
        let y = self.td_target(batch, rng)?;
        let e1 = self.critic_eval(CriticId::One, batch, &y)?;
        let e2 = self.critic_eval(CriticId::Two, batch, &y)?;
        adam_step(&mut self.critic1, &e1.grads.values, self.cfg.adam)?;
        adam_step(&mut self.critic2, &e2.grads.values, self.cfg.adam)?;
        self.critic1.buffers = e1.new_buffers;
        self.critic2.buffers = e2.new_buffers;
        self.critic_updates += 1;
        Ok(0.5 * (e1.loss + e2.loss))
    }

    /// Policy loss `−mean(min_j Q_j(s, π(o)))` plus the pre-clip excess
    /// penalty, and its gradient through the per-sample minimum into the
    /// actor. Critics run in train mode to make their input gradients
    /// available but are left untouched.
    pub fn actor_eval(&self, batch: &[Transition]) -> Result<ActorEval, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let n = batch.len();
        let dims = self.cfg.action_dim();

        let corrupt: Vec<&Observation> = batch.iter().map(|t| &t.corrupt_obs).collect();
        let (img, aux) = self.stack(&corrupt, false)?;
        let (raw, cache, new_buffers) =
            self.actor_net.forward(&self.actor, &img, &aux, n, Mode::Train)?;
        let cache = cache.expect("train-mode cache");
        let new_buffers = new_buffers.expect("train-mode buffers");
        let actions: Vec<f64> = raw.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        // clip subgradient: pass-through on the closed interval, zero outside
        let mask: Vec<f64> = raw
            .iter()
            .map(|&v| if (-1.0..=1.0).contains(&v) { 1.0 } else { 0.0 })
            .collect();

        let obs: Vec<&Observation> = batch.iter().map(|t| self.critic_obs(t)).collect();
        let (cimg, caux_state) = self.stack(&obs, !self.cfg.symmetric_critic)?;
        let caux = self.append_actions(&caux_state, &actions, n);
        let (q1, cache1, _) = self.critic_net.forward(&self.critic1, &cimg, &caux, n, Mode::Train)?;
        let (q2, cache2, _) = self.critic_net.forward(&self.critic2, &cimg, &caux, n, Mode::Train)?;

        let mut loss = 0.0;
        let mut grad1 = vec![0.0; n];
        let mut grad2 = vec![0.0; n];
        for i in 0..n {
            // ties go to critic one, matching min()'s first-argument bias
            if q1[i] <= q2[i] {
                loss -= q1[i] / n as f64;
                grad1[i] = -1.0 / n as f64;
            } else {
                loss -= q2[i] / n as f64;
                grad2[i] = -1.0 / n as f64;
            }
        }
        for (r, a) in raw.iter().zip(&actions) {
            let e = r - a;
            loss += PRECLIP_PENALTY * e * e / n as f64;
        }
        if !loss.is_finite() {
            return Err(AgentError::Nn(NnError::NonFinite("actor loss".into())));
        }
        let g1 = self
            .critic_net
            .backward(&self.critic1, &cache1.expect("train-mode cache"), &grad1)?;
        let g2 = self
            .critic_net
            .backward(&self.critic2, &cache2.expect("train-mode cache"), &grad2)?;

        let mut grad_raw = vec![0.0; n * dims];
        for i in 0..n {
            for k in 0..dims {
                let j = i * dims + k;
                let col = i * (STATE_DIM + dims) + STATE_DIM + k;
                let da = g1.aux_input[col] + g2.aux_input[col];
                grad_raw[j] =
                    da * mask[j] + 2.0 * PRECLIP_PENALTY * (raw[j] - actions[j]) / n as f64;
            }
        }
        let grads = self.actor_net.backward(&self.actor, &cache, &grad_raw)?;
        Ok(ActorEval { loss, grads, actions, new_buffers })
    }

    /// Delayed policy step: one Adam step on the actor only.
    pub fn actor_update(&mut self, batch: &[Transition]) -> Result<f64, AgentError> {
        let e = self.actor_eval(batch)?;
        adam_step(&mut self.actor, &e.grads.values, self.cfg.adam)?;
        self.actor.buffers = e.new_buffers;
        self.actor_updates += 1;
        Ok(e.loss)
    }

    /// Blends every target net toward its online source by `tau`.
    pub fn soft_update(&mut self) {
        let tau = self.cfg.tau;
        self.target_actor.soft_update_from(&self.actor, tau);
        self.target_critic1.soft_update_from(&self.critic1, tau);
        self.target_critic2.soft_update_from(&self.critic2, tau);
    }

    /// Canonical learner step: critic update always; actor update plus
    /// target blend on every `policy_delay`-th call.
    pub fn train_step(
        &mut self,
        batch: &[Transition],
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainStepStats, AgentError> {
        let critic_loss = self.critic_update(batch, rng)?;
        let actor_loss = if self.critic_updates % self.cfg.policy_delay == 0 {
            let l = self.actor_update(batch)?;
            self.soft_update();
            Some(l)
        } else {
            None
        };
        Ok(TrainStepStats { critic_loss, actor_loss })
    }
}

const AGENT_MAGIC: &[u8; 8] = b"NAVAGNT1";
pub const AGENT_CHECKPOINT_VERSION: u32 = 1;

/// Serializes the full learner: config (with its hash), update counters, and
/// all six parameter sets. Each set carries its network spec hash, so loads
/// against a structurally different config are refused.
pub fn write_agent(w: &mut impl Write, agent: &Agent) -> Result<(), AgentError> {
    let cfg_json =
        serde_json::to_vec(&agent.cfg).map_err(|e| AgentError::BadCheckpoint(e.to_string()))?;
    w.write_all(AGENT_MAGIC)?;
    w.write_all(&AGENT_CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(cfg_json.len() as u64).to_le_bytes())?;
    w.write_all(&cfg_json)?;
    w.write_all(&fnv1a64(&cfg_json).to_le_bytes())?;
    w.write_all(&agent.critic_updates.to_le_bytes())?;
    w.write_all(&agent.actor_updates.to_le_bytes())?;
    let aspec = agent.actor_net.spec();
    let cspec = agent.critic_net.spec();
    write_paramset(w, aspec, &agent.actor)?;
    write_paramset(w, aspec, &agent.target_actor)?;
    write_paramset(w, cspec, &agent.critic1)?;
    write_paramset(w, cspec, &agent.critic2)?;
    write_paramset(w, cspec, &agent.target_critic1)?;
    write_paramset(w, cspec, &agent.target_critic2)?;
    Ok(())
}

pub fn read_agent(r: &mut impl Read) -> Result<Agent, AgentError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != AGENT_MAGIC {
        return Err(AgentError::BadCheckpoint("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != AGENT_CHECKPOINT_VERSION {
        return Err(AgentError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > (1 << 20) {
        return Err(AgentError::BadCheckpoint("oversized config block".into()));
    }
    let mut cfg_json = vec![0u8; len as usize];
    r.read_exact(&mut cfg_json)?;
    r.read_exact(&mut b8)?;
    if u64::from_le_bytes(b8) != fnv1a64(&cfg_json) {
        return Err(AgentError::BadCheckpoint("config hash mismatch".into()));
    }
    let cfg: AgentConfig =
        serde_json::from_slice(&cfg_json).map_err(|e| AgentError::BadCheckpoint(e.to_string()))?;
    r.read_exact(&mut b8)?;
    let critic_updates = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let actor_updates = u64::from_le_bytes(b8);

    let mut agent = Agent::new(cfg, 0)?;
    let aspec = agent.actor_net.spec().clone();
    let cspec = agent.critic_net.spec().clone();
    agent.actor = read_paramset(r, &aspec)?;
    agent.target_actor = read_paramset(r, &aspec)?;
    agent.critic1 = read_paramset(r, &cspec)?;
    agent.critic2 = read_paramset(r, &cspec)?;
    agent.target_critic1 = read_paramset(r, &cspec)?;
    agent.target_critic2 = read_paramset(r, &cspec)?;
    agent.critic_updates = critic_updates;
    agent.actor_updates = actor_updates;
    Ok(agent)
}

pub fn save_agent(path: &Path, agent: &Agent) -> Result<(), AgentError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_agent(&mut w, agent)?;
    w.flush()?;
    Ok(())
}

pub fn load_agent(path: &Path) -> Result<Agent, AgentError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_agent(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{DepthImage, SelfState};
    use rand::{Rng, SeedableRng};

    /// Small profile that keeps tests fast while exercising every layer.
    fn test_cfg() -> AgentConfig {
        AgentConfig {
            net: NetProfile { image_h: 8, image_w: 8, conv_channels: [1, 2, 2], fc_width: 6 },
            batch_size: 2,
            ..AgentConfig::default()
        }
    }

    fn obs(rng: &mut ChaCha8Rng, h: usize, w: usize, privileged: bool) -> Observation {
        let codes = (0..h * w).map(|_| rng.random_range(0..=255) as u8).collect();
        Observation {
            depth: DepthImage { h, w, codes },
            state: SelfState {
                d: [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-5.0..5.0)],
                v: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0)],
                dpsi: rng.random_range(-3.0..3.0),
                yaw_rate: rng.random_range(-0.3..0.3),
            },
            privileged,
        }
    }

    fn transition(rng: &mut ChaCha8Rng, cfg: &AgentConfig) -> Transition {
        let (h, w) = (cfg.net.image_h, cfg.net.image_w);
        let dims = cfg.action_dim();
        Transition {
            priv_obs: obs(rng, h, w, true),
            corrupt_obs: obs(rng, h, w, false),
            action: (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect(),
            reward: rng.random_range(-1.0..1.0),
            next_priv_obs: obs(rng, h, w, true),
            next_corrupt_obs: obs(rng, h, w, false),
            terminal: false,
            truncated: false,
        }
    }

    fn batch(rng: &mut ChaCha8Rng, cfg: &AgentConfig, n: usize) -> Vec<Transition> {
        (0..n).map(|_| transition(rng, cfg)).collect()
    }

    fn zero_params(p: &mut ParamSet) {
        p.values.iter_mut().for_each(|v| *v = 0.0);
        p.buffers.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Flat index of the final head layer's bias for a single-output net.
    fn final_bias_index(net: &Network) -> usize {
        let (off, len) = *net.head_value_slots().last().unwrap();
        off + len - 1
    }

    #[test]
    fn select_action_is_deterministic_and_rejects_privileged_input() {
        let cfg = test_cfg();
        let agent = Agent::new(cfg.clone(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = obs(&mut rng, 8, 8, false);
        let a1 = agent.select_action(&o, false, &mut rng).unwrap();
        let a2 = agent.select_action(&o, false, &mut rng).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(a1.len(), 4);
        assert!(a1.iter().all(|v| (-1.0..=1.0).contains(v)));

        let p = obs(&mut rng, 8, 8, true);
        assert!(matches!(
            agent.select_action(&p, false, &mut rng),
            Err(AgentError::PrivilegedLeak)
        ));
    }

    #[test]
    fn zero_weight_actor_emits_the_zero_action() {
        let cfg = test_cfg();
        let mut agent = Agent::new(cfg, 7).unwrap();
        zero_params(&mut agent.actor);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = obs(&mut rng, 8, 8, false);
        let a = agent.select_action(&o, false, &mut rng).unwrap();
        assert_eq!(a, vec![0.0; 4]);
    }

    #[test]
    fn exploration_noise_is_clipped_and_changes_the_action() {
        let cfg = test_cfg();
        let mut agent = Agent::new(cfg, 3).unwrap();
        agent.cfg.exploration_sigma = 10.0; // force frequent clipping
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = obs(&mut rng, 8, 8, false);
        let base = agent.select_action(&o, false, &mut rng).unwrap();
        let noisy = agent.select_action(&o, true, &mut rng).unwrap();
        assert_ne!(base, noisy);
        assert!(noisy.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    /// Pins the target critics to constants by zeroing everything except the
    /// final bias, then checks the TD identity by hand.
    #[test]
    fn td_target_hand_values() {
        let cfg = test_cfg();
        let mut agent = Agent::new(cfg.clone(), 11).unwrap();
        let b1 = final_bias_index(&agent.critic_net);
        zero_params(&mut agent.target_critic1);
        zero_params(&mut agent.target_critic2);
        agent.target_critic1.values[b1] = 2.0;
        agent.target_critic2.values[b1] = 2.0;

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut batch = batch(&mut rng, &cfg, 3);
        batch[0].reward = 1.0;
        batch[1].reward = -0.25;
        batch[1].terminal = true;
        batch[2].reward = 0.5;
        batch[2].truncated = true; // step cap: still bootstraps

        let y = agent.td_target(&batch, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!((y[0] - (1.0 + 0.99 * 2.0)).abs() < 1e-12);
        assert!((y[1] - (-0.25)).abs() < 1e-12);
        assert!((y[2] - (0.5 + 0.99 * 2.0)).abs() < 1e-12);

        // asymmetric target critics: the min side wins
        agent.target_critic2.values[b1] = 1.5;
        let d = agent
            .td_target_detail(&batch, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert!((d.y[0] - (1.0 + 0.99 * 1.5)).abs() < 1e-12);
        assert!(d.q1.iter().all(|q| (q - 2.0).abs() < 1e-12));
        assert!(d.q2.iter().all(|q| (q - 1.5).abs() < 1e-12));
    }

    #[test]
    fn smoothing_noise_respects_the_clip_bound() {
        let cfg = AgentConfig { smoothing_sigma: 2.0, ..test_cfg() };
        let agent = Agent::new(cfg.clone(), 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = batch(&mut rng, &cfg, 8);
        let d = agent.td_target_detail(&b, &mut rng).unwrap();
        assert!(d.noise.iter().all(|e| e.abs() <= cfg.smoothing_clip));
        assert!(d.noise.iter().any(|e| e.abs() > 0.45)); // sigma 2 ⇒ mostly pinned
        assert!(d.a_prime.iter().all(|a| (-1.0..=1.0).contains(a)));
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let cfg = test_cfg();
        let mut agent = Agent::new(cfg.clone(), 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = batch(&mut rng, &cfg, 2);
        let y = vec![0.3, -0.7];
        let eval = agent.critic_eval(CriticId::One, &b, &y).unwrap();

        let h = 1e-5;
        let n_vals = agent.critic1.values.len();
        // probe a spread of parameters across all layers
        let idxs: Vec<usize> = (0..40).map(|k| k * n_vals / 40).collect();
        for &i in &idxs {
            let orig = agent.critic1.values[i];
            agent.critic1.values[i] = orig + h;
            let lp = agent.critic_eval(CriticId::One, &b, &y).unwrap().loss;
            agent.critic1.values[i] = orig - h;
            let lm = agent.critic_eval(CriticId::One, &b, &y).unwrap().loss;
            agent.critic1.values[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = eval.grads.values[i];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                ((fd - an) / denom).abs() < 1e-4,
                "critic param {i}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let cfg = test_cfg();
        let mut agent = Agent::new(cfg.clone(), 19).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = batch(&mut rng, &cfg, 2);
        let eval = agent.actor_eval(&b).unwrap();

        let h = 1e-5;
        let n_vals = agent.actor.values.len();
        let idxs: Vec<usize> = (0..40).map(|k| k * n_vals / 40).collect();
        for &i in &idxs {
            let orig = agent.actor.values[i];
            agent.actor.values[i] = orig + h;
            let lp = agent.actor_eval(&b).unwrap().loss;
            agent.actor.values[i] = orig - h;
            let lm = agent.actor_eval(&b).unwrap().loss;
            agent.actor.values[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = eval.grads.values[i];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                ((fd - an) / denom).abs() < 1e-4,
                "actor param {i}: fd {fd} vs analytic {an}"
            );
        }
    }

    /// A head pushed far outside the action box must find its way back: the
    /// clip's subgradient is zero out there, so only the pre-clip penalty can
    /// supply the restoring gradient.
    #[test]
    fn saturated_actor_head_recovers() {
        let cfg = test_cfg();
        let mut agent = Agent::new(cfg.clone(), 31).unwrap();
        agent.cfg.adam.lr = 0.01;
        let (off, len) = *agent.actor_net.head_value_slots().last().unwrap();
        let dims = cfg.action_dim();
        for b in 0..dims {
            agent.actor.values[off + len - dims + b] = 6.0;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = batch(&mut rng, &cfg, 2);
        let worst = |agent: &Agent| -> f64 {
            b.iter()
                .flat_map(|t| {
                    let f = featurize(&t.corrupt_obs, &agent.cfg.state_scale);
                    let (raw, _, _) = agent
                        .actor_net
                        .forward(&agent.actor, &f.image, &f.aux, 1, Mode::Eval)
                        .unwrap();
                    raw
                })
                .fold(0.0, |m, v| v.abs().max(m))
        };
        assert!(worst(&agent) > 5.0);
        for _ in 0..400 {
            agent.actor_update(&b).unwrap();
        }
        assert!(worst(&agent) < 1.5, "head still saturated: {}", worst(&agent));
    }

    /// Routes a single linear path through both nets so the policy gradient
    /// has a closed form: L = −w·mean(a₀), a₀ = θ·x₀ ⇒ ∂L/∂θ = −w·mean(x₀).
    #[test]
    fn actor_gradient_closed_form_on_linear_toy() {
        let cfg = test_cfg();
        let mut agent = Agent::new(cfg.clone(), 23).unwrap();
        for p in [&mut agent.actor, &mut agent.critic1, &mut agent.critic2] {
            zero_params(p);
        }
        let fc = cfg.net.fc_width;

        // actor head: aux₀ → out₀ via the first row of each FC, with a +2
        // bias shift through the leaky units (undone at the output).
        let aslots = agent.actor_net.head_value_slots();
        let a_in = agent.actor_net.trunk_shapes().last().unwrap().len() + STATE_DIM;
        let theta = 0.35;
        let (o1, _) = aslots[0];
        agent.actor.values[o1 + a_in - STATE_DIM] = theta; // row 0, aux col 0
        agent.actor.values[o1 + fc * a_in] = 2.0; // row 0 bias
        let (o2, _) = aslots[2];
        agent.actor.values[o2] = 1.0; // row 0 ← col 0
        let (o3, _) = aslots[4];
        agent.actor.values[o3] = 1.0; // out 0 ← col 0
        agent.actor.values[o3 + 4 * fc] = -2.0; // out 0 bias cancels the shift

        // critic 1: Q = w·a₀ by the same construction
        let cslots = agent.critic_net.head_value_slots();
        let c_in = agent.critic_net.trunk_shapes().last().unwrap().len() + STATE_DIM + 4;
        let w = 1.7;
        let (c1, _) = cslots[0];
        agent.critic1.values[c1 + c_in - 4] = w; // row 0, action col 0
        agent.critic1.values[c1 + fc * c_in] = 10.0; // shift into the linear region
        let (c2, _) = cslots[2];
        agent.critic1.values[c2] = 1.0;
        let (c3, _) = cslots[4];
        agent.critic1.values[c3] = 1.0;
        agent.critic1.values[c3 + fc] = -10.0;

        // critic 2 constant high so the min always picks critic 1
        agent.critic2.values[final_bias_index(&agent.critic_net)] = 100.0;

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let b = batch(&mut rng, &cfg, 4);
        let eval = agent.actor_eval(&b).unwrap();

        let mean_x0: f64 = b
            .iter()
            .map(|t| t.corrupt_obs.state.d[0] / cfg.state_scale[0])
            .sum::<f64>()
            / b.len() as f64;
        let expect_loss = -w * theta * mean_x0;
        assert!((eval.loss - expect_loss).abs() < 1e-12, "{} vs {expect_loss}", eval.loss);
        let g = eval.grads.values[o1 + a_in - STATE_DIM];
        assert!((g - (-w * mean_x0)).abs() < 1e-12, "{g} vs {}", -w * mean_x0);
    }

    #[test]
    fn soft_update_blends_toward_sources() {
        let cfg = test_cfg();
        let mut agent = Agent::new(cfg, 29).unwrap();
        agent.actor.values.iter_mut().for_each(|v| *v = 1.0);
        agent.target_actor.values.iter_mut().for_each(|v| *v = 0.0);

        agent.cfg.tau = 0.005;
        agent.soft_update();
        assert!(agent.target_actor.values.iter().all(|v| (v - 0.005).abs() < 1e-15));

        agent.cfg.tau = 1.0;
        agent.soft_update();
        assert_eq!(agent.target_actor.values, agent.actor.values);

        let before = agent.target_critic1.clone();
        agent.cfg.tau = 0.0;
        // tau = 0 is rejected by validate(); exercise the blend math directly
        agent.target_critic1.soft_update_from(&agent.critic1, 0.0);
        assert_eq!(agent.target_critic1.values, before.values);
    }

    #[test]
    fn delayed_updates_follow_the_configured_ratio() {
        let cfg = test_cfg();
        let mut agent = Agent::new(cfg.clone(), 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = batch(&mut rng, &cfg, 2);
        for _ in 0..7 {
            agent.train_step(&b, &mut rng).unwrap();
        }
        assert_eq!(agent.critic_updates, 7);
        assert_eq!(agent.actor_updates, 3);
    }

    #[test]
    fn checkpoint_roundtrip_and_mismatch_refusal() {
        let cfg = test_cfg();
        let mut agent = Agent::new(cfg.clone(), 37).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let b = batch(&mut rng, &cfg, 2);
        for _ in 0..3 {
            agent.train_step(&b, &mut rng).unwrap();
        }

        let mut bytes = Vec::new();
        write_agent(&mut bytes, &agent).unwrap();
        let loaded = read_agent(&mut bytes.as_slice()).unwrap();
        assert_eq!(loaded.cfg, agent.cfg);
        assert_eq!(loaded.critic_updates, 3);
        assert_eq!(loaded.actor_updates, 1);
        assert_eq!(loaded.actor, agent.actor);
        assert_eq!(loaded.target_critic2, agent.target_critic2);

        // a truncated stream must not parse
        let cut = &bytes[..bytes.len() / 2];
        assert!(read_agent(&mut &cut[..]).is_err());
    }

    #[test]
    fn symmetric_switch_reads_corrupted_observations_only() {
        let cfg = AgentConfig { symmetric_critic: true, ..test_cfg() };
        let agent = Agent::new(cfg.clone(), 41).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let b = batch(&mut rng, &cfg, 2);
        // privileged and corrupted slots differ, so identical results would
        // mean the switch is dead; this just needs to run cleanly
        let y = agent.td_target(&b, &mut rng).unwrap();
        assert_eq!(y.len(), 2);
        let e = agent.critic_eval(CriticId::One, &b, &y).unwrap();
        assert!(e.loss.is_finite());
    }
}
