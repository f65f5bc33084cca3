use std::sync::Arc;

use rand::Rng as _;

use crate::env::{discrete_actions, one_hot, ActionSpace, EnvSpec, MultiAgentEnv, Reset, StepResult};
use crate::error::{Error, Result};
use crate::nn::Action;
use crate::seeding::Rng;
use crate::tabular::TabularGame;

/// Samples episodes from a [`TabularGame`]. Every agent observes the one-hot
/// state, which is also the global state. Reward bound: the game's largest
/// absolute reward.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    spec: EnvSpec,
    game: Arc<TabularGame>,
    state: usize,
    t: usize,
}

fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

impl TabularEnv {
    pub fn new(game: Arc<TabularGame>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let n = game.n_agents();
        let s = game.n_states();
        Ok(Self {
            spec: EnvSpec {
                n_agents: n,
                obs_dims: vec![s; n],
                action_spaces: game
                    .action_counts()
                    .iter()
                    .map(|&k| ActionSpace::Discrete(k))
                    .collect(),
                horizon,
                state_dim: s,
                reward_bound: game.max_abs_reward(),
            },
            game,
            state: 0,
            t: 0,
        })
    }

    pub fn game(&self) -> &TabularGame {
        &self.game
    }

    /// Index of the current state.
    pub fn state_index(&self) -> usize {
        self.state
    }

    fn observe(&self) -> Reset {
        let x = one_hot(self.game.n_states(), self.state);
        Reset {
            observations: vec![x.clone(); self.spec.n_agents],
            state: x,
        }
    }
}

impl MultiAgentEnv for TabularEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Reset {
        self.state = sample_index(self.game.initial_dist(), rng);
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, actions: &[Action], rng: &mut Rng) -> Result<StepResult> {
        let a = discrete_actions(&self.spec, actions)?;
        let j = self.game.joint_space().encode(&a);
        let reward = self.game.reward(self.state, j);
        self.state = sample_index(self.game.next_state_dist(self.state, j), rng);
        self.t += 1;
        let obs = self.observe();
        Ok(StepResult {
            observations: obs.observations,
            state: obs.state,
            reward,
            terminal: self.t >= self.spec.horizon,
            clamped: 0,
        })
    }
}
