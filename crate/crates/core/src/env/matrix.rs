use crate::env::{discrete_actions, ActionSpace, EnvSpec, MultiAgentEnv, Reset, StepResult};
use crate::error::{Error, Result};
use crate::nn::Action;
use crate::seeding::Rng;

/// One-step two-agent coordination game. Reward 1 if both agents pick the
/// target, -0.5 if exactly one does, 0 otherwise. Observations and the
/// global state are the constant `[1.0]`. Reward bound 1.
#[derive(Debug, Clone)]
pub struct MatrixGame {
    spec: EnvSpec,
    target: usize,
}

impl MatrixGame {
    pub fn new(k: usize, target: usize) -> Result<Self> {
        if k < 2 || target >= k {
            return Err(Error::InvalidArgument(format!(
                "matrix game needs k >= 2 and target < k (k = {k}, target = {target})"
            )));
        }
        Ok(Self {
            spec: EnvSpec {
                n_agents: 2,
                obs_dims: vec![1, 1],
                action_spaces: vec![ActionSpace::Discrete(k); 2],
                horizon: 1,
                state_dim: 1,
                reward_bound: 1.0,
            },
            target,
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn reward(&self, a0: usize, a1: usize) -> f64 {
        match (a0 == self.target, a1 == self.target) {
            (true, true) => 1.0,
            (true, false) | (false, true) => -0.5,
            (false, false) => 0.0,
        }
    }
}

impl MultiAgentEnv for MatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut Rng) -> Reset {
        Reset {
            observations: vec![vec![1.0]; 2],
            state: vec![1.0],
        }
    }

    fn step(&mut self, actions: &[Action], _rng: &mut Rng) -> Result<StepResult> {
        let a = discrete_actions(&self.spec, actions)?;
        Ok(StepResult {
            observations: vec![vec![1.0]; 2],
            state: vec![1.0],
            reward: self.reward(a[0], a[1]),
            terminal: true,
            clamped: 0,
        })
    }
}
