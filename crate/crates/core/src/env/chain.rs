use rand::Rng;

use super::{AgentStep, Environment, Outcome, SimRng, StepResult};
use crate::error::Result;
use crate::sim::MetaAction;

/// Deterministic single-agent chain: `LaneLeft` / `LaneRight` move one
/// state down / up, every other action stays. Entering the last state pays
/// 1 and ends the episode.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    pub states: usize,
    pub horizon: usize,
    state: usize,
    steps: usize,
    reached: bool,
    obs: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainOutcome {
    pub reached_goal: bool,
    pub steps: usize,
}

impl Outcome for ChainOutcome {
    fn success(&self) -> bool {
        self.reached_goal
    }
}

fn transition(states: usize, s: usize, a: MetaAction) -> (usize, f64, bool) {
    let next = match a {
        MetaAction::LaneLeft => s.saturating_sub(1),
        MetaAction::LaneRight => (s + 1).min(states - 1),
        _ => s,
    };
    let goal = next == states - 1;
    (next, if goal { 1.0 } else { 0.0 }, goal)
}

impl ChainMdp {
    pub fn new(states: usize, horizon: usize) -> Self {
        assert!(states >= 2, "a chain needs a start and a goal state");
        Self { states, horizon, state: 0, steps: 0, reached: false, obs: vec![0.0; states] }
    }

    pub fn one_hot(&self, s: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.states];
        v[s] = 1.0;
        v
    }

    fn set_state(&mut self, s: usize) {
        self.state = s;
        self.obs = self.one_hot(s);
    }
}

/// Optimal action values of the non-goal states by value iteration,
/// row-major `states - 1` by `MetaAction::COUNT`.
pub fn chain_optimal_q(states: usize, gamma: f64) -> Vec<f64> {
    let k = MetaAction::COUNT;
    let mut q = vec![0.0; (states - 1) * k];
    loop {
        let v: Vec<f64> = (0..states - 1)
            .map(|s| q[s * k..(s + 1) * k].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut delta = 0.0f64;
        for s in 0..states - 1 {
            for a in MetaAction::ALL {
                let (next, r, done) = transition(states, s, a);
                let value = r + if done { 0.0 } else { gamma * v[next] };
                delta = delta.max((value - q[s * k + a.code()]).abs());
                q[s * k + a.code()] = value;
            }
        }
        if delta < 1e-14 {
            return q;
        }
    }
}

impl Environment for ChainMdp {
    type Outcome = ChainOutcome;

    fn observation_width(&self) -> usize {
        self.states
    }

    fn agent_count(&self) -> usize {
        1
    }

    fn policy_group(&self, _agent: usize) -> usize {
        0
    }

    fn group_count(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        self.horizon
    }

    fn set_evaluation(&mut self, _on: bool) {}

    fn reset(&mut self, rng: &mut SimRng) -> Result<()> {
        let s = rng.random_range(0..self.states - 1);
        self.set_state(s);
        self.steps = 0;
        self.reached = false;
        Ok(())
    }

    fn observation(&self, _agent: usize) -> Option<&[f32]> {
        (!self.is_done()).then_some(self.obs.as_slice())
    }

    fn priority_distance(&self) -> f64 {
        (self.states - 1 - self.state) as f64
    }

    fn step(&mut self, actions: &[MetaAction], _rng: &mut SimRng) -> Result<StepResult> {
        if self.is_done() {
            return Ok(StepResult { agents: vec![None] });
        }
        let (next, reward, done) = transition(self.states, self.state, actions[0]);
        self.set_state(next);
        self.steps += 1;
        self.reached = done;
        Ok(StepResult { agents: vec![Some(AgentStep { reward, terminal: done, next_obs: self.obs.clone() })] })
    }

    fn is_done(&self) -> bool {
        self.reached || self.steps >= self.horizon
    }

    fn elapsed_steps(&self) -> usize {
        self.steps
    }

    fn outcome(&self) -> ChainOutcome {
        ChainOutcome { reached_goal: self.reached, steps: self.steps }
    }
}
