//! Multi-agent episodic environments driven by the trainer.

mod chain;
mod highway;

pub use chain::{chain_optimal_q, ChainMdp, ChainOutcome};
pub use highway::{
    random_action, CrashEvent, EpisodeMetrics, HighwayEnv, ScenarioConfig, TrajectoryRecord,
};

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::sim::MetaAction;

/// Random stream type used throughout simulation and training.
pub type SimRng = ChaCha8Rng;

/// What one agent experienced over one decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub reward: f64,
    /// The agent has left the episode (crash or absorbing state).
    pub terminal: bool,
    pub next_obs: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Indexed by agent; `None` for agents that were inactive before the step.
    pub agents: Vec<Option<AgentStep>>,
}

pub trait Outcome {
    /// Whether the episode reached its goal.
    fn success(&self) -> bool;
}

/// Episodic environment with a fixed set of agents acting synchronously.
pub trait Environment {
    type Outcome: Outcome + Clone + std::fmt::Debug;

    fn observation_width(&self) -> usize;
    fn agent_count(&self) -> usize;
    /// Agents in the same group share a policy and a replay buffer.
    fn policy_group(&self, agent: usize) -> usize;
    fn group_count(&self) -> usize;
    /// Upper bound on decision steps per episode.
    fn max_steps(&self) -> usize;
    /// Switches between the training and the test initial-state distribution.
    fn set_evaluation(&mut self, on: bool);

    fn reset(&mut self, rng: &mut SimRng) -> Result<()>;
    /// Current observation of an active agent.
    fn observation(&self, agent: usize) -> Option<&[f32]>;
    /// Replay priority input for transitions generated at the current step.
    fn priority_distance(&self) -> f64;
    /// Advances one decision step; `actions` holds one entry per agent
    /// (ignored for inactive agents).
    fn step(&mut self, actions: &[MetaAction], rng: &mut SimRng) -> Result<StepResult>;
    fn is_done(&self) -> bool;
    /// Decision steps simulated since the last reset, including any drained
    /// after the agents left.
    fn elapsed_steps(&self) -> usize;
    fn outcome(&self) -> Self::Outcome;
}
