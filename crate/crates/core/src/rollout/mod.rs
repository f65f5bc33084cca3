//! Trajectory collection, the centralized critic and advantage estimation.

mod critic;

pub use critic::{critic_loss, critic_update, ExactCritic, ValueFn, ZeroCritic};

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Env, MultiAgentEnv};
use crate::error::{Error, Result};
use crate::nn::{Action, AgentActions, PolicyParams};
use crate::seeding::{stream_rng, Stream};

/// Variance floor used by [`normalize_advantages`].
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaeConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
        }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gae.gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("gae.lambda must be in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Columnar batch of complete episodes, ordered by (episode, timestep).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    /// Per agent, one observation row per sample.
    pub observations: Vec<Array2<f64>>,
    pub actions: Vec<AgentActions>,
    /// Per agent, log-probability of the action under the collecting policy.
    pub old_log_probs: Vec<Vec<f64>>,
    /// One global state row per sample.
    pub states: Array2<f64>,
    pub rewards: Vec<f64>,
    pub terminals: Vec<bool>,
    pub episode_ids: Vec<usize>,
    pub timesteps: Vec<usize>,
    /// Undiscounted return of each episode, in episode order.
    pub episode_returns: Vec<f64>,
    /// Continuous action components clamped by the environment.
    pub clamped_actions: usize,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Importance accumulator: advantage times the ratios of every agent
    /// already updated this iteration.
    pub m_weight: Vec<f64>,
    /// Agents whose ratios have been multiplied into `m_weight`, in order.
    pub m_applied: Vec<usize>,
}

struct Episode {
    observations: Vec<Vec<Vec<f64>>>,
    actions: Vec<Vec<Action>>,
    log_probs: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    clamped: usize,
}

fn run_episode(env: &Env, policies: &[PolicyParams], seed: u64, index: u64) -> Result<Episode> {
    let mut env = env.clone();
    let mut rng = stream_rng(seed, Stream::Episode, index);
    let n = policies.len();
    let horizon = env.spec().horizon;
    let mut ep = Episode {
        observations: vec![Vec::with_capacity(horizon); n],
        actions: vec![Vec::with_capacity(horizon); n],
        log_probs: vec![Vec::with_capacity(horizon); n],
        states: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        terminals: Vec::with_capacity(horizon),
        clamped: 0,
    };
    let start = env.reset(&mut rng);
    let (mut obs, mut state) = (start.observations, start.state);
    loop {
        let mut joint = Vec::with_capacity(n);
        for (i, policy) in policies.iter().enumerate() {
            let dist = policy.forward(&obs[i])?;
            let action = dist.sample(&mut rng);
            ep.log_probs[i].push(dist.log_prob(&action)?);
            joint.push(action);
        }
        let step = env.step(&joint, &mut rng)?;
        for (i, (o, a)) in obs.into_iter().zip(joint).enumerate() {
            ep.observations[i].push(o);
            ep.actions[i].push(a);
        }
        ep.states.push(state);
        ep.rewards.push(step.reward);
        ep.terminals.push(step.terminal);
        ep.clamped += step.clamped;
        if step.terminal {
            return Ok(ep);
        }
        if ep.rewards.len() > horizon {
            return Err(Error::InvalidArgument("environment ran past its horizon".into()));
        }
        obs = step.observations;
        state = step.state;
    }
}

fn rows(data: Vec<Vec<f64>>, width: usize) -> Array2<f64> {
    let n = data.len();
    Array2::from_shape_vec((n, width), data.into_iter().flatten().collect())
        .expect("rows have the declared width")
}

/// Runs `episodes` complete episodes under `policies`. Episode `e` draws all
/// its randomness from stream `(seed, Episode, first_episode + e)`, so the
/// batch does not depend on how episodes are scheduled across threads.
pub fn collect(
    env: &Env,
    policies: &[PolicyParams],
    episodes: usize,
    seed: u64,
    first_episode: u64,
) -> Result<RolloutBatch> {
    let spec = env.spec();
    if policies.len() != spec.n_agents {
        return Err(Error::DimensionMismatch {
            context: "policies per agent",
            expected: spec.n_agents,
            got: policies.len(),
        });
    }
    for (i, (p, space)) in policies.iter().zip(&spec.action_spaces).enumerate() {
        if p.obs_dim() != spec.obs_dims[i]
            || p.is_discrete() != space.is_discrete()
            || p.body.output_dim() != space.width()
        {
            return Err(Error::InvalidPolicy(format!(
                "agent {i}: policy head does not match the environment"
            )));
        }
    }
    let eps: Vec<Episode> = (0..episodes)
        .into_par_iter()
        .map(|e| run_episode(env, policies, seed, first_episode + e as u64))
        .collect::<Result<_>>()?;

    let n = spec.n_agents;
    let mut batch_obs = vec![Vec::new(); n];
    let mut batch_actions: Vec<Vec<Action>> = vec![Vec::new(); n];
    let mut old_log_probs = vec![Vec::new(); n];
    let mut states = Vec::new();
    let mut rewards = Vec::new();
    let mut terminals = Vec::new();
    let mut episode_ids = Vec::new();
    let mut timesteps = Vec::new();
    let mut episode_returns = Vec::with_capacity(episodes);
    let mut clamped_actions = 0;
    for (e, ep) in eps.into_iter().enumerate() {
        let len = ep.rewards.len();
        episode_returns.push(ep.rewards.iter().sum());
        episode_ids.extend(std::iter::repeat_n(e, len));
        timesteps.extend(0..len);
        for i in 0..n {
            batch_obs[i].extend(ep.observations[i].iter().cloned());
            batch_actions[i].extend(ep.actions[i].iter().cloned());
            old_log_probs[i].extend(&ep.log_probs[i]);
        }
        states.extend(ep.states);
        rewards.extend(ep.rewards);
        terminals.extend(ep.terminals);
        clamped_actions += ep.clamped;
    }
    let total = rewards.len();
    let observations = batch_obs
        .into_iter()
        .enumerate()
        .map(|(i, o)| rows(o, spec.obs_dims[i]))
        .collect();
    let actions = batch_actions
        .into_iter()
        .zip(&spec.action_spaces)
        .map(|(acts, space)| pack_actions(acts, space.is_discrete(), space.width()))
        .collect();
    Ok(RolloutBatch {
        observations,
        actions,
        old_log_probs,
        states: rows(states, spec.state_dim),
        rewards,
        terminals,
        episode_ids,
        timesteps,
        episode_returns,
        clamped_actions,
        values: vec![0.0; total],
        advantages: vec![0.0; total],
        returns: vec![0.0; total],
        m_weight: vec![0.0; total],
        m_applied: Vec::new(),
    })
}

fn pack_actions(actions: Vec<Action>, discrete: bool, width: usize) -> AgentActions {
    if !discrete {
        let data = actions
            .into_iter()
            .flat_map(|a| match a {
                Action::Continuous(x) => x,
                Action::Discrete(_) => unreachable!("mixed action kinds"),
            })
            .collect::<Vec<_>>();
        let n = data.len() / width;
        AgentActions::Continuous(Array2::from_shape_vec((n, width), data).expect("fixed width"))
    } else {
        AgentActions::Discrete(
            actions
                .into_iter()
                .map(|a| match a {
                    Action::Discrete(x) => x,
                    Action::Continuous(_) => unreachable!("mixed action kinds"),
                })
                .collect(),
        )
    }
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.observations.len()
    }

    pub fn n_episodes(&self) -> usize {
        self.episode_returns.len()
    }

    pub fn mean_episode_return(&self) -> f64 {
        if self.episode_returns.is_empty() {
            return 0.0;
        }
        self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
    }

    /// Sets `m_weight` to the current advantages and clears the record of
    /// applied ratios.
    pub fn reset_m(&mut self) {
        self.m_weight.clone_from(&self.advantages);
        self.m_applied.clear();
    }

    /// Writes one row per sample. Column order: `episode, t, reward,
    /// terminal, value, advantage, return, m_weight, s0..s{d-1}`, then for
    /// each agent `i`: `o{i}_0.., a{i}_0.., logp{i}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let mut header: Vec<String> = [
            "episode", "t", "reward", "terminal", "value", "advantage", "return", "m_weight",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..self.states.ncols()).map(|k| format!("s{k}")));
        for i in 0..self.n_agents() {
            header.extend((0..self.observations[i].ncols()).map(|k| format!("o{i}_{k}")));
            let width = match &self.actions[i] {
                AgentActions::Discrete(_) => 1,
                AgentActions::Continuous(a) => a.ncols(),
            };
            header.extend((0..width).map(|k| format!("a{i}_{k}")));
            header.push(format!("logp{i}"));
        }
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut row = vec![
                self.episode_ids[t].to_string(),
                self.timesteps[t].to_string(),
                self.rewards[t].to_string(),
                u8::from(self.terminals[t]).to_string(),
                self.values[t].to_string(),
                self.advantages[t].to_string(),
                self.returns[t].to_string(),
                self.m_weight[t].to_string(),
            ];
            row.extend(self.states.row(t).iter().map(f64::to_string));
            for i in 0..self.n_agents() {
                row.extend(self.observations[i].row(t).iter().map(f64::to_string));
                match &self.actions[i] {
                    AgentActions::Discrete(a) => row.push(a[t].to_string()),
                    AgentActions::Continuous(a) => row.extend(a.row(t).iter().map(f64::to_string)),
                }
                row.push(self.old_log_probs[i][t].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        inner.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fills values from `critic`, then advantages
/// `A_t = sum_l (gamma lambda)^l delta_{t+l}` with
/// `delta_t = r_t + gamma V(s_{t+1}) (1 - terminal_t) - V(s_t)`, return
/// targets `A_t + V(s_t)`, and resets `m_weight` to the advantages.
pub fn compute_gae(batch: &mut RolloutBatch, critic: &dyn ValueFn, cfg: &GaeConfig) -> Result<()> {
    cfg.validate()?;
    batch.values = critic.values(batch.states.view())?;
    let n = batch.len();
    let mut running = 0.0;
    for t in (0..n).rev() {
        let last_of_episode = batch.terminals[t] || t + 1 == n || batch.episode_ids[t + 1] != batch.episode_ids[t];
        let (next_value, carry) = if last_of_episode {
            (0.0, 0.0)
        } else {
            (batch.values[t + 1], running)
        };
        let delta = batch.rewards[t] + cfg.gamma * next_value - batch.values[t];
        running = delta + cfg.gamma * cfg.lambda * carry;
        batch.advantages[t] = running;
        batch.returns[t] = running + batch.values[t];
    }
    batch.reset_m();
    Ok(())
}

/// Zero-mean, unit-variance advantages (variance floored at
/// [`VARIANCE_FLOOR`]); `m_weight` is reset to the result.
pub fn normalize_advantages(batch: &mut RolloutBatch) {
    let n = batch.len();
    if n > 0 {
        let mean = batch.advantages.iter().sum::<f64>() / n as f64;
        let var = batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.max(VARIANCE_FLOOR).sqrt();
        batch.advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
    batch.reset_m();
}
