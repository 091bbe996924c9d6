//! Semi-sequential multi-agent Q-learning with policy dissemination.
//!
//! Every policy group owns an online network, a target network, an Adam
//! state and a replay buffer. Agents act with the last disseminated snapshot
//! of their group. An update cycle visits the agents in turn; on its turn an
//! agent performs `dissemination_period` gradient steps on its group while
//! every acting policy stays frozen, then the updated weights replace the
//! group snapshot for all agents at once.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Outcome, SimRng};
use crate::error::{Error, Result};
use crate::qnet::{adam_step, argmax, td_loss_and_grads, AdamConfig, AdamState, Architecture, Network};
use crate::replay::{ReplayBuffer, ReplayConfig, ReplayEntry};
use crate::sim::MetaAction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub adam: AdamConfig,
    /// Gradient updates between target-network refreshes, counted per group.
    pub target_update: u64,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    /// Share of all training frames over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Gradient steps an agent performs before its weights are disseminated.
    pub dissemination_period: usize,
    /// Rescales each gradient to at most this global L2 norm.
    pub max_grad_norm: Option<f64>,
    pub replay: ReplayConfig,
    pub architecture: Architecture,
    /// Generate every episode first, then run all update cycles.
    pub strict_two_phase: bool,
    /// Episodes (or update cycles in two-phase mode) between evaluations.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Record the protocol trace.
    pub trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            batch_size: 32,
            gamma: 0.95,
            adam: AdamConfig::default(),
            target_update: 200,
            epsilon_start: 1.0,
            epsilon_final: 0.1,
            epsilon_decay_fraction: 0.8,
            dissemination_period: 4,
            max_grad_norm: None,
            replay: ReplayConfig::default(),
            architecture: Architecture::default(),
            strict_two_phase: false,
            eval_every: 100,
            eval_episodes: 20,
            trace: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.episodes == 0 || self.batch_size == 0 || self.dissemination_period == 0 || self.target_update == 0 {
            return bad("episodes, batch size, dissemination period and target update must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("discount {} outside [0, 1)", self.gamma));
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.adam.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.epsilon_final) || !(0.0..=1.0).contains(&self.epsilon_start) {
            return bad("exploration rates must lie in [0, 1]".into());
        }
        if self.epsilon_start < self.epsilon_final {
            return bad("initial exploration below final exploration".into());
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 0.9) {
            return bad(format!(
                "decay fraction {} must lie in (0, 0.9] so ε settles before the last tenth of training",
                self.epsilon_decay_fraction
            ));
        }
        if self.replay.capacity < self.batch_size {
            return bad("replay capacity below batch size".into());
        }
        Ok(())
    }

    /// Frames after which ε stays at its final value.
    pub fn decay_horizon(&self, total_frames: u64) -> u64 {
        ((total_frames as f64 * self.epsilon_decay_fraction).round() as u64).max(1)
    }
}

/// Linear decay from `epsilon_start` to `epsilon_final` over `horizon` frames.
pub fn epsilon_schedule(frame: u64, horizon: u64, cfg: &TrainConfig) -> f64 {
    if frame >= horizon {
        return cfg.epsilon_final;
    }
    let t = frame as f64 / horizon as f64;
    cfg.epsilon_start + (cfg.epsilon_final - cfg.epsilon_start) * t
}

/// ε-greedy action; greedy ties go to the lowest action code.
pub fn act<R: Rng + ?Sized>(obs: &[f32], net: &Network<f32>, epsilon: f64, rng: &mut R) -> Result<MetaAction> {
    let explore = rng.random::<f64>() < epsilon;
    let code = if explore { rng.random_range(0..MetaAction::COUNT) } else { argmax(&net.forward(obs)?) };
    Ok(MetaAction::ALL[code])
}

/// Immutable weights shared by every agent of a group between updates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub weights: Network<f32>,
    /// Dissemination count of the group; 0 is the initial policy.
    pub version: u64,
    pub frame: u64,
    /// Agent whose update produced these weights.
    pub last_agent: Option<usize>,
}

/// The policy each agent currently acts with.
#[derive(Debug, Clone)]
pub struct AgentRegistry {
    groups: Vec<usize>,
    policies: Vec<Arc<PolicySnapshot>>,
}

impl AgentRegistry {
    pub fn new(groups: Vec<usize>, initial: &[Arc<PolicySnapshot>]) -> Self {
        let policies = groups.iter().map(|&g| Arc::clone(&initial[g])).collect();
        Self { groups, policies }
    }

    pub fn policy(&self, agent: usize) -> &Arc<PolicySnapshot> {
        &self.policies[agent]
    }

    pub fn policies(&self) -> &[Arc<PolicySnapshot>] {
        &self.policies
    }

    pub fn group(&self, agent: usize) -> usize {
        self.groups[agent]
    }
}

/// Points every agent of `group` at `snapshot`.
pub fn disseminate(snapshot: Arc<PolicySnapshot>, group: usize, mut registry: AgentRegistry) -> AgentRegistry {
    for (g, p) in registry.groups.iter().zip(registry.policies.iter_mut()) {
        if *g == group {
            *p = Arc::clone(&snapshot);
        }
    }
    registry
}

/// One agent's experience over one decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub agent: usize,
    pub obs: Vec<f32>,
    pub action: MetaAction,
    pub reward: f64,
    pub next_obs: Vec<f32>,
    pub terminal: bool,
    pub merge_distance: f64,
}

/// Plays one episode from a fresh reset; inactive agents contribute nothing.
pub fn run_episode<E: Environment, R: Rng + ?Sized>(
    env: &mut E,
    registry: &AgentRegistry,
    epsilon: f64,
    env_rng: &mut SimRng,
    act_rng: &mut R,
) -> Result<(Vec<Transition>, E::Outcome)> {
    let mut transitions = Vec::new();
    let outcome = play(env, registry, epsilon, env_rng, act_rng, |t| transitions.push(t))?;
    Ok((transitions, outcome))
}

fn play<E: Environment, R: Rng + ?Sized>(
    env: &mut E,
    registry: &AgentRegistry,
    epsilon: f64,
    env_rng: &mut SimRng,
    act_rng: &mut R,
    mut sink: impl FnMut(Transition),
) -> Result<E::Outcome> {
    env.reset(env_rng)?;
    let n = env.agent_count();
    let mut actions = vec![MetaAction::Idle; n];
    let mut observations: Vec<Option<Vec<f32>>> = vec![None; n];
    while !env.is_done() {
        for (k, slot) in observations.iter_mut().enumerate() {
            *slot = env.observation(k).map(<[f32]>::to_vec);
            actions[k] = match slot {
                Some(obs) => act(obs, &registry.policy(k).weights, epsilon, act_rng)?,
                None => MetaAction::Idle,
            };
        }
        let merge_distance = env.priority_distance();
        let result = env.step(&actions, env_rng)?;
        for (k, step) in result.agents.into_iter().enumerate() {
            if let (Some(step), Some(obs)) = (step, observations[k].take()) {
                sink(Transition {
                    agent: k,
                    obs,
                    action: actions[k],
                    reward: step.reward,
                    next_obs: step.next_obs,
                    terminal: step.terminal,
                    merge_distance,
                });
            }
        }
    }
    Ok(env.outcome())
}

const STREAM_INIT: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_REPLAY: u64 = 3;
const STREAM_TRAIN_EPISODE: u64 = 4;
const STREAM_EVAL_EPISODE: u64 = 5;

/// Independent random stream `index` of kind `purpose` derived from `seed`.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) ^ index);
    rng
}

/// Environment stream of training episode `index`; shared by every run with
/// the same seed, so paired runs see identical initial states.
pub fn training_episode_rng(seed: u64, index: u64) -> SimRng {
    stream_rng(seed, STREAM_TRAIN_EPISODE, index)
}

pub fn evaluation_episode_rng(seed: u64, index: u64) -> SimRng {
    stream_rng(seed, STREAM_EVAL_EPISODE, index)
}

/// Greedy (ε = 0) episodes on the evaluation initial-state distribution.
pub fn evaluate_policies<E: Environment>(
    env: &mut E,
    registry: &AgentRegistry,
    episodes: usize,
    seed: u64,
) -> Result<Vec<E::Outcome>> {
    evaluate_policies_with(env, registry, episodes, seed, |_, _| Ok(()))
}

/// As [`evaluate_policies`], calling `after` with the episode index and the
/// finished environment.
pub fn evaluate_policies_with<E: Environment>(
    env: &mut E,
    registry: &AgentRegistry,
    episodes: usize,
    seed: u64,
    mut after: impl FnMut(usize, &E) -> Result<()>,
) -> Result<Vec<E::Outcome>> {
    env.set_evaluation(true);
    let mut act_rng = stream_rng(seed, STREAM_ACT, u64::MAX);
    let out = (0..episodes)
        .map(|e| {
            let mut env_rng = evaluation_episode_rng(seed, e as u64);
            let outcome = play(env, registry, 0.0, &mut env_rng, &mut act_rng, |_| {})?;
            after(e, env)?;
            Ok(outcome)
        })
        .collect();
    env.set_evaluation(false);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ProtocolEvent {
    /// A training episode and the snapshot version each agent acted with.
    Episode { index: usize, versions: Vec<u64> },
    Update { agent: usize, group: usize, update: u64 },
    TargetSync { group: usize, update: u64 },
    Disseminate { agent: usize, group: usize, version: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub frame: u64,
    /// Mean TD loss since the previous row; NaN before training starts.
    pub loss: f64,
    pub epsilon: f64,
    /// Success rate of the greedy evaluation, when one ran.
    pub eval_merge_rate: Option<f64>,
}

/// A periodic checkpoint handed to the caller during training.
#[derive(Debug)]
pub struct Checkpoint<'a> {
    pub episode: usize,
    pub frame: u64,
    pub policies: &'a [Arc<PolicySnapshot>],
    pub eval_success: Option<f64>,
}

/// Training curve as CSV with columns frame, loss, epsilon, eval_merge_rate.
pub fn write_curve_csv<W: std::io::Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(crate::eval::csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutput<O> {
    /// Final snapshot per policy group.
    pub policies: Vec<Arc<PolicySnapshot>>,
    pub curve: Vec<CurveRow>,
    pub trace: Vec<ProtocolEvent>,
    pub episodes: Vec<O>,
    pub updates: u64,
    pub frames: u64,
}

struct Learner {
    online: Network<f32>,
    target: Network<f32>,
    adam: AdamState<f32>,
    replay: ReplayBuffer,
    updates: u64,
    snapshot: Arc<PolicySnapshot>,
}

struct Trainer<'c, E: Environment> {
    env: E,
    eval_env: E,
    cfg: &'c TrainConfig,
    seed: u64,
    learners: Vec<Learner>,
    registry: AgentRegistry,
    act_rng: SimRng,
    replay_rng: SimRng,
    frame: u64,
    horizon: u64,
    total_updates: u64,
    loss_sum: f64,
    loss_count: u64,
    out: TrainOutput<E::Outcome>,
}

impl<E: Environment + Clone> Trainer<'_, E> {
    fn epsilon(&self) -> f64 {
        epsilon_schedule(self.frame, self.horizon, self.cfg)
    }

    fn generate_episode(&mut self, index: usize) -> Result<()> {
        if self.cfg.trace {
            let versions = self.registry.policies().iter().map(|p| p.version).collect();
            self.out.trace.push(ProtocolEvent::Episode { index, versions });
        }
        let mut env_rng = training_episode_rng(self.seed, index as u64);
        let epsilon = self.epsilon();
        let registry = &self.registry;
        let learners = &mut self.learners;
        let mut pushed: Result<()> = Ok(());
        let outcome = play(&mut self.env, registry, epsilon, &mut env_rng, &mut self.act_rng, |t| {
            if pushed.is_ok() {
                pushed = learners[registry.group(t.agent)].replay.push(ReplayEntry {
                    obs: t.obs,
                    action: t.action.code(),
                    reward: t.reward as f32,
                    next_obs: t.next_obs,
                    terminal: t.terminal,
                    merge_distance: t.merge_distance,
                });
            }
        })?;
        pushed?;
        self.frame += self.env.elapsed_steps() as u64;
        self.out.episodes.push(outcome);
        Ok(())
    }

    fn update_cycle(&mut self) -> Result<()> {
        for agent in 0..self.registry.groups.len() {
            let g = self.registry.group(agent);
            let learner = &mut self.learners[g];
            if !learner.replay.is_warm() || learner.replay.len() < self.cfg.batch_size {
                continue;
            }
            for _ in 0..self.cfg.dissemination_period {
                let batch = learner.replay.sample_batch(self.cfg.batch_size, &mut self.replay_rng)?;
                let step = td_loss_and_grads(&learner.online, &learner.target, &batch, self.cfg.gamma as f32);
                let update = self.total_updates + 1;
                let (loss, mut grads) = match step {
                    Ok(v) => v,
                    Err(Error::NonFinite { value, .. }) => return Err(Error::Diverged { update, loss: value }),
                    Err(e) => return Err(e),
                };
                if let Some(limit) = self.cfg.max_grad_norm {
                    clip_norm(&mut grads, limit);
                }
                adam_step(&mut learner.online, &grads, &mut learner.adam);
                if !learner.online.is_finite() {
                    return Err(Error::Diverged { update, loss });
                }
                learner.updates += 1;
                self.total_updates = update;
                self.loss_sum += loss;
                self.loss_count += 1;
                if self.cfg.trace {
                    self.out.trace.push(ProtocolEvent::Update { agent, group: g, update: learner.updates });
                }
                if learner.updates % self.cfg.target_update == 0 {
                    learner.target = learner.online.clone();
                    if self.cfg.trace {
                        self.out.trace.push(ProtocolEvent::TargetSync { group: g, update: learner.updates });
                    }
                }
            }
            let snapshot = Arc::new(PolicySnapshot {
                weights: learner.online.clone(),
                version: learner.snapshot.version + 1,
                frame: self.frame,
                last_agent: Some(agent),
            });
            learner.snapshot = Arc::clone(&snapshot);
            if self.cfg.trace {
                self.out.trace.push(ProtocolEvent::Disseminate { agent, group: g, version: snapshot.version });
            }
            let registry = std::mem::replace(&mut self.registry, AgentRegistry { groups: Vec::new(), policies: Vec::new() });
            self.registry = disseminate(snapshot, g, registry);
        }
        Ok(())
    }

    fn maybe_checkpoint(
        &mut self,
        done: usize,
        on_checkpoint: &mut dyn FnMut(Checkpoint<'_>) -> Result<()>,
    ) -> Result<()> {
        let last = done == self.cfg.episodes;
        if !(last || (self.cfg.eval_every > 0 && done % self.cfg.eval_every == 0)) {
            return Ok(());
        }
        let eval_success = if self.cfg.eval_episodes > 0 {
            let outcomes = evaluate_policies(&mut self.eval_env, &self.registry, self.cfg.eval_episodes, self.seed)?;
            Some(outcomes.iter().filter(|o| o.success()).count() as f64 / outcomes.len() as f64)
        } else {
            None
        };
        let loss = if self.loss_count > 0 { self.loss_sum / self.loss_count as f64 } else { f64::NAN };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.out.curve.push(CurveRow { frame: self.frame, loss, epsilon: self.epsilon(), eval_merge_rate: eval_success });
        let policies: Vec<Arc<PolicySnapshot>> = self.learners.iter().map(|l| Arc::clone(&l.snapshot)).collect();
        on_checkpoint(Checkpoint { episode: done, frame: self.frame, policies: &policies, eval_success })
    }
}

fn clip_norm(grads: &mut Network<f32>, limit: f64) {
    let norm = grads.params().flatten().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if norm > limit {
        let scale = (limit / norm) as f32;
        grads.params_mut().flatten().for_each(|g| *g *= scale);
    }
}

/// Trains one policy per group of `env` and reports periodic checkpoints.
pub fn train<E: Environment + Clone>(
    env: E,
    cfg: &TrainConfig,
    seed: u64,
    on_checkpoint: &mut dyn FnMut(Checkpoint<'_>) -> Result<()>,
) -> Result<TrainOutput<E::Outcome>> {
    cfg.validate()?;
    let width = env.observation_width();
    let mut init_rng = stream_rng(seed, STREAM_INIT, 0);
    let mut learners = Vec::with_capacity(env.group_count());
    for _ in 0..env.group_count() {
        let online = Network::he(width, cfg.architecture.hidden(), MetaAction::COUNT, &mut init_rng);
        let snapshot = Arc::new(PolicySnapshot { weights: online.clone(), version: 0, frame: 0, last_agent: None });
        learners.push(Learner {
            target: online.clone(),
            adam: AdamState::new(&online, cfg.adam),
            replay: ReplayBuffer::new(width, cfg.replay.clone())?,
            updates: 0,
            online,
            snapshot,
        });
    }
    let groups: Vec<usize> = (0..env.agent_count()).map(|a| env.policy_group(a)).collect();
    let initial: Vec<Arc<PolicySnapshot>> = learners.iter().map(|l| Arc::clone(&l.snapshot)).collect();
    let total_frames = (cfg.episodes * env.max_steps()) as u64;
    let mut t = Trainer {
        eval_env: env.clone(),
        env,
        cfg,
        seed,
        learners,
        registry: AgentRegistry::new(groups, &initial),
        act_rng: stream_rng(seed, STREAM_ACT, 0),
        replay_rng: stream_rng(seed, STREAM_REPLAY, 0),
        frame: 0,
        horizon: cfg.decay_horizon(total_frames),
        total_updates: 0,
        loss_sum: 0.0,
        loss_count: 0,
        out: TrainOutput { policies: Vec::new(), curve: Vec::new(), trace: Vec::new(), episodes: Vec::new(), updates: 0, frames: 0 },
    };
    if cfg.strict_two_phase {
        for e in 0..cfg.episodes {
            t.generate_episode(e)?;
        }
        for c in 0..cfg.episodes {
            t.update_cycle()?;
            t.maybe_checkpoint(c + 1, on_checkpoint)?;
        }
    } else {
        for e in 0..cfg.episodes {
            t.generate_episode(e)?;
            t.update_cycle()?;
            t.maybe_checkpoint(e + 1, on_checkpoint)?;
        }
    }
    t.out.policies = t.learners.iter().map(|l| Arc::clone(&l.snapshot)).collect();
    t.out.updates = t.total_updates;
    t.out.frames = t.frame;
    Ok(t.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{chain_optimal_q, ChainMdp, HighwayEnv, ScenarioConfig};
    use crate::reward::SvoParams;

    fn quiet(_: Checkpoint<'_>) -> Result<()> {
        Ok(())
    }

    #[test]
    fn epsilon_endpoints_and_midpoint() {
        let cfg = TrainConfig::default();
        assert_eq!(epsilon_schedule(0, 1000, &cfg), 1.0);
        assert_eq!(epsilon_schedule(1000, 1000, &cfg), 0.1);
        assert_eq!(epsilon_schedule(5000, 1000, &cfg), 0.1);
        assert!((epsilon_schedule(500, 1000, &cfg) - 0.55).abs() < 1e-12);
        let total = (cfg.episodes * 18) as u64;
        assert!(cfg.decay_horizon(total) <= total * 9 / 10);
    }

    #[test]
    fn greedy_action_and_tie_break() {
        let mut net = Network::<f32>::he(3, &[4], 5, &mut SimRng::seed_from_u64(0));
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let mut rng = SimRng::seed_from_u64(1);
        assert_eq!(act(&[1.0, 2.0, 3.0], &net, 0.0, &mut rng).unwrap(), MetaAction::LaneLeft);
        net.layers[1].bias[1] = 1.0;
        assert_eq!(act(&[1.0, 2.0, 3.0], &net, 0.0, &mut rng).unwrap(), MetaAction::Idle);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = Network::<f32>::he(2, &[4], 5, &mut SimRng::seed_from_u64(0));
        let mut rng = SimRng::seed_from_u64(7);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[act(&[0.3, -0.2], &net, 1.0, &mut rng).unwrap().code()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn dissemination_replaces_every_group_member() {
        let mut rng = SimRng::seed_from_u64(3);
        let a = Arc::new(PolicySnapshot { weights: Network::he(4, &[8], 5, &mut rng), version: 0, frame: 0, last_agent: None });
        let b = Arc::new(PolicySnapshot { weights: Network::he(4, &[8], 5, &mut rng), version: 0, frame: 0, last_agent: None });
        let reg = AgentRegistry::new(vec![0, 0, 1, 0], &[a, Arc::clone(&b)]);
        let fresh = Arc::new(PolicySnapshot { weights: Network::he(4, &[8], 5, &mut rng), version: 1, frame: 9, last_agent: Some(1) });
        let reg = disseminate(Arc::clone(&fresh), 0, reg);
        for agent in [0, 1, 3] {
            assert!(Arc::ptr_eq(reg.policy(agent), &fresh));
        }
        assert!(Arc::ptr_eq(reg.policy(2), &b));
        let x = [0.1, -0.4, 2.0, 0.0];
        let q0 = reg.policy(0).weights.forward(&x).unwrap();
        assert_eq!(q0, reg.policy(3).weights.forward(&x).unwrap());
    }

    fn chain_config(episodes: usize) -> TrainConfig {
        TrainConfig {
            episodes,
            architecture: Architecture::Collapsed,
            replay: ReplayConfig { capacity: 20_000, warmup: 200, ..ReplayConfig::default() },
            eval_every: 0,
            eval_episodes: 0,
            ..TrainConfig::default()
        }
    }

    fn chain_error(policy: &Network<f32>, chain: &ChainMdp, gamma: f64) -> f64 {
        let q_star = chain_optimal_q(chain.states, gamma);
        let k = MetaAction::COUNT;
        let mut worst = 0.0f64;
        for s in 0..chain.states - 1 {
            let q = policy.forward(&chain.one_hot(s)).unwrap();
            for a in 0..k {
                worst = worst.max((q[a] as f64 - q_star[s * k + a]).abs());
            }
        }
        worst
    }

    #[test]
    fn trainer_recovers_chain_action_values() {
        let chain = ChainMdp::new(5, 10);
        let cfg = chain_config(1500);
        let started = std::time::Instant::now();
        let out = train(chain.clone(), &cfg, 11, &mut quiet).unwrap();
        let err = chain_error(&out.policies[0].weights, &chain, cfg.gamma);
        assert!(err < 0.05, "L-inf error {err}");
        assert!(started.elapsed().as_secs() < 60);
    }

    #[test]
    fn single_update_target_refresh_runs() {
        let cfg = TrainConfig { target_update: 1, ..chain_config(60) };
        let out = train(ChainMdp::new(5, 10), &cfg, 2, &mut quiet).unwrap();
        assert!(out.updates > 0);
    }

    #[test]
    fn protocol_trace_accounting() {
        let cfg = TrainConfig { trace: true, target_update: 7, ..chain_config(80) };
        let out = train(ChainMdp::new(5, 10), &cfg, 5, &mut quiet).unwrap();
        let mut since = 0;
        let mut disseminations = 0u64;
        let mut current = 0u64;
        for ev in &out.trace {
            match ev {
                ProtocolEvent::Update { .. } => since += 1,
                ProtocolEvent::Disseminate { version, .. } => {
                    assert_eq!(since, cfg.dissemination_period);
                    since = 0;
                    disseminations += 1;
                    current = *version;
                }
                ProtocolEvent::Episode { versions, .. } => {
                    assert_eq!(since, 0, "episode generated mid-window");
                    assert_eq!(versions, &vec![current]);
                }
                ProtocolEvent::TargetSync { update, .. } => assert_eq!(update % cfg.target_update, 0),
            }
        }
        assert_eq!(disseminations, out.updates.div_ceil(cfg.dissemination_period as u64));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig { trace: true, ..chain_config(50) };
        let a = train(ChainMdp::new(4, 8), &cfg, 9, &mut quiet).unwrap();
        let b = train(ChainMdp::new(4, 8), &cfg, 9, &mut quiet).unwrap();
        assert_eq!(a.policies[0].weights, b.policies[0].weights);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn two_phase_mode_trains_after_filling() {
        let cfg = TrainConfig { trace: true, strict_two_phase: true, ..chain_config(60) };
        let out = train(ChainMdp::new(5, 10), &cfg, 4, &mut quiet).unwrap();
        let first_update = out.trace.iter().position(|e| matches!(e, ProtocolEvent::Update { .. })).unwrap();
        let episodes = out.trace.iter().filter(|e| matches!(e, ProtocolEvent::Episode { .. })).count();
        assert_eq!(first_update, episodes);
        assert!(out.trace[..episodes].iter().all(|e| matches!(e, ProtocolEvent::Episode { versions, .. } if versions == &vec![0])));
    }

    fn small_highway() -> HighwayEnv {
        let sc = ScenarioConfig { humans: 3, agents: 2, ..ScenarioConfig::default() };
        HighwayEnv::new(sc, vec![SvoParams::sympathetic_cooperative(std::f64::consts::FRAC_PI_4); 2]).unwrap()
    }

    #[test]
    fn highway_episode_transitions_are_reproducible() {
        let mut env = small_highway();
        let width = env.observation_width();
        let net = Network::he(width, &[16], 5, &mut SimRng::seed_from_u64(0));
        let snap = Arc::new(PolicySnapshot { weights: net, version: 0, frame: 0, last_agent: None });
        let reg = AgentRegistry::new(vec![0, 0], &[snap]);
        let run = |env: &mut HighwayEnv| {
            let mut act_rng = SimRng::seed_from_u64(2);
            run_episode(env, &reg, 0.5, &mut training_episode_rng(3, 0), &mut act_rng).unwrap()
        };
        let (a, ma) = run(&mut env);
        let (b, mb) = run(&mut env);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        for k in 0..2 {
            let steps = a.iter().filter(|t| t.agent == k).count();
            assert!(steps >= 1 && steps <= 18);
        }
        assert!(a.iter().all(|t| t.obs.len() == width && t.reward.is_finite()));
    }

    #[test]
    fn diverging_learning_rate_is_reported() {
        let mut cfg = chain_config(400);
        cfg.adam.learning_rate = 1e30;
        match train(ChainMdp::new(5, 10), &cfg, 1, &mut quiet) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|o| o.updates)),
        }
    }
}
