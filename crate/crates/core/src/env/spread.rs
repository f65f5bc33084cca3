use rand::seq::index::sample;
use rand::Rng as _;

use crate::env::{discrete_actions, ActionSpace, EnvSpec, MultiAgentEnv, Reset, StepResult};
use crate::error::{Error, Result};
use crate::nn::Action;
use crate::seeding::{stream_rng, Rng, Stream};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;

/// Cooperative coverage on a `grid x grid` board with one landmark per agent.
///
/// Landmarks are distinct cells fixed at construction from `layout_seed`;
/// agents start on uniformly random cells each episode. After every move the
/// shared reward is `-sum_l min_i manhattan(agent_i, l) / (2 (grid - 1))`,
/// so `|r| <= n_agents`. Positions in observations and the global state are
/// scaled by `1 / (grid - 1)`.
#[derive(Debug, Clone)]
pub struct SpreadGrid {
    spec: EnvSpec,
    grid: usize,
    landmarks: Vec<(usize, usize)>,
    agents: Vec<(usize, usize)>,
    t: usize,
}

impl SpreadGrid {
    pub fn new(grid: usize, n_agents: usize, horizon: usize, layout_seed: u64) -> Result<Self> {
        let mut rng = stream_rng(layout_seed, Stream::Environment, 0);
        let landmarks = sample(&mut rng, grid * grid, n_agents.max(1))
            .into_iter()
            .map(|c| (c / grid, c % grid))
            .collect();
        Self::with_landmarks(grid, n_agents, horizon, landmarks)
    }

    /// Explicit landmark cells as `(row, col)`.
    pub fn with_landmarks(
        grid: usize,
        n_agents: usize,
        horizon: usize,
        landmarks: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if grid < 3 || n_agents == 0 || n_agents > grid || horizon == 0 {
            return Err(Error::InvalidArgument(format!(
                "spread grid needs grid >= 3, 1 <= n_agents <= grid, horizon >= 1 \
                 (grid = {grid}, n_agents = {n_agents}, horizon = {horizon})"
            )));
        }
        if landmarks.is_empty() || landmarks.iter().any(|&(r, c)| r >= grid || c >= grid) {
            return Err(Error::InvalidArgument("landmarks must lie on the grid".into()));
        }
        let n_landmarks = landmarks.len();
        Ok(Self {
            spec: EnvSpec {
                n_agents,
                obs_dims: vec![2 + 2 * n_landmarks; n_agents],
                action_spaces: vec![ActionSpace::Discrete(5); n_agents],
                horizon,
                state_dim: 2 * n_agents,
                reward_bound: n_landmarks as f64,
            },
            grid,
            landmarks,
            agents: vec![(0, 0); n_agents],
            t: 0,
        })
    }

    pub fn landmarks(&self) -> &[(usize, usize)] {
        &self.landmarks
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.agents
    }

    /// Places agents explicitly (for scripted tests) and restarts the clock.
    pub fn set_positions(&mut self, positions: Vec<(usize, usize)>) -> Result<Reset> {
        if positions.len() != self.spec.n_agents
            || positions.iter().any(|&(r, c)| r >= self.grid || c >= self.grid)
        {
            return Err(Error::InvalidArgument("positions must lie on the grid".into()));
        }
        self.agents = positions;
        self.t = 0;
        Ok(self.observe())
    }

    pub fn normalizer(&self) -> f64 {
        2.0 * (self.grid - 1) as f64
    }

    fn reward(&self) -> f64 {
        let total: usize = self
            .landmarks
            .iter()
            .map(|&(lr, lc)| {
                self.agents
                    .iter()
                    .map(|&(r, c)| r.abs_diff(lr) + c.abs_diff(lc))
                    .min()
                    .expect("at least one agent")
            })
            .sum();
        -(total as f64) / self.normalizer()
    }

    fn observe(&self) -> Reset {
        let scale = 1.0 / (self.grid - 1) as f64;
        let landmark_coords: Vec<f64> = self
            .landmarks
            .iter()
            .flat_map(|&(r, c)| [r as f64 * scale, c as f64 * scale])
            .collect();
        let observations = self
            .agents
            .iter()
            .map(|&(r, c)| {
                let mut o = vec![r as f64 * scale, c as f64 * scale];
                o.extend_from_slice(&landmark_coords);
                o
            })
            .collect();
        let state = self
            .agents
            .iter()
            .flat_map(|&(r, c)| [r as f64 * scale, c as f64 * scale])
            .collect();
        Reset { observations, state }
    }
}

impl MultiAgentEnv for SpreadGrid {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Reset {
        let g = self.grid;
        self.agents = (0..self.spec.n_agents)
            .map(|_| (rng.random_range(0..g), rng.random_range(0..g)))
            .collect();
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, actions: &[Action], _rng: &mut Rng) -> Result<StepResult> {
        let moves = discrete_actions(&self.spec, actions)?;
        let last = self.grid - 1;
        for (pos, m) in self.agents.iter_mut().zip(moves) {
            let (r, c) = *pos;
            *pos = match m {
                UP => (r.saturating_sub(1), c),
                DOWN => ((r + 1).min(last), c),
                LEFT => (r, c.saturating_sub(1)),
                RIGHT => (r, (c + 1).min(last)),
                _ => (r, c),
            };
        }
        self.t += 1;
        let obs = self.observe();
        Ok(StepResult {
            observations: obs.observations,
            state: obs.state,
            reward: self.reward(),
            terminal: self.t >= self.spec.horizon,
            clamped: 0,
        })
    }
}
