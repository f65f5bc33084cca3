//! Desk-scale cooperative environments.
//!
//! All environments share one reward across agents, run for a fixed horizon
//! and take their randomness from the caller's RNG, so an episode is a pure
//! function of the stream it is given.

mod gather;
mod matrix;
mod spread;
mod tabular_env;

pub use gather::ContinuousGather;
pub use matrix::MatrixGame;
pub use spread::{SpreadGrid, DOWN, LEFT, RIGHT, STAY, UP};
pub use tabular_env::TabularEnv;

use crate::error::{Error, Result};
use crate::nn::Action;
use crate::seeding::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Box `[low, high]^dim`; out-of-range actions are clamped.
    Continuous { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }

    /// Number of actions (discrete) or action dimension (continuous).
    pub fn width(&self) -> usize {
        match self {
            ActionSpace::Discrete(k) => *k,
            ActionSpace::Continuous { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub obs_dims: Vec<usize>,
    pub action_spaces: Vec<ActionSpace>,
    pub horizon: usize,
    pub state_dim: usize,
    /// Every per-step reward satisfies `|r| <= reward_bound`.
    pub reward_bound: f64,
}

/// Observations after a reset.
#[derive(Debug, Clone, PartialEq)]
pub struct Reset {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    /// Shared by all agents.
    pub reward: f64,
    pub terminal: bool,
    /// Continuous action components clamped into bounds on this step.
    pub clamped: usize,
}

pub trait MultiAgentEnv {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, rng: &mut Rng) -> Reset;
    fn step(&mut self, actions: &[Action], rng: &mut Rng) -> Result<StepResult>;
}

/// Any of the built-in environments.
#[derive(Debug, Clone)]
pub enum Env {
    Matrix(MatrixGame),
    Spread(SpreadGrid),
    Gather(ContinuousGather),
    Tabular(TabularEnv),
}

impl MultiAgentEnv for Env {
    fn spec(&self) -> &EnvSpec {
        match self {
            Env::Matrix(e) => e.spec(),
            Env::Spread(e) => e.spec(),
            Env::Gather(e) => e.spec(),
            Env::Tabular(e) => e.spec(),
        }
    }

    fn reset(&mut self, rng: &mut Rng) -> Reset {
        match self {
            Env::Matrix(e) => e.reset(rng),
            Env::Spread(e) => e.reset(rng),
            Env::Gather(e) => e.reset(rng),
            Env::Tabular(e) => e.reset(rng),
        }
    }

    fn step(&mut self, actions: &[Action], rng: &mut Rng) -> Result<StepResult> {
        match self {
            Env::Matrix(e) => e.step(actions, rng),
            Env::Spread(e) => e.step(actions, rng),
            Env::Gather(e) => e.step(actions, rng),
            Env::Tabular(e) => e.step(actions, rng),
        }
    }
}

impl From<MatrixGame> for Env {
    fn from(e: MatrixGame) -> Self {
        Env::Matrix(e)
    }
}

impl From<SpreadGrid> for Env {
    fn from(e: SpreadGrid) -> Self {
        Env::Spread(e)
    }
}

impl From<ContinuousGather> for Env {
    fn from(e: ContinuousGather) -> Self {
        Env::Gather(e)
    }
}

impl From<TabularEnv> for Env {
    fn from(e: TabularEnv) -> Self {
        Env::Tabular(e)
    }
}

/// Validates discrete actions against the action spaces and returns their indices.
fn discrete_actions(spec: &EnvSpec, actions: &[Action]) -> Result<Vec<usize>> {
    check_count(spec, actions)?;
    actions
        .iter()
        .zip(&spec.action_spaces)
        .enumerate()
        .map(|(i, (a, space))| match (a, space) {
            (Action::Discrete(a), ActionSpace::Discrete(k)) if a < k => Ok(*a),
            (Action::Discrete(a), ActionSpace::Discrete(k)) => Err(Error::InvalidAction(format!(
                "agent {i}: action {a} out of range for {k} actions"
            ))),
            _ => Err(Error::InvalidAction(format!("agent {i}: expected a discrete action"))),
        })
        .collect()
}

fn check_count(spec: &EnvSpec, actions: &[Action]) -> Result<()> {
    if actions.len() != spec.n_agents {
        return Err(Error::DimensionMismatch {
            context: "actions per step",
            expected: spec.n_agents,
            got: actions.len(),
        });
    }
    Ok(())
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}
