use crate::error::{Error, Result};
use crate::tabular::game::{JointActionSpace, TabularGame};

const ROW_TOL: f64 = 1e-12;

/// One agent's decision rule as a `n_states x n_actions` probability table.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTable {
    n_actions: usize,
    probs: Vec<f64>,
}

impl AgentTable {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                context: "agent table",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidPolicy(format!(
                    "state {s}: entries must lie in [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidPolicy(format!("state {s}: row sums to {sum}")));
            }
        }
        Ok(Self { n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Builds a table from per-state logits with a numerically stable softmax.
    pub fn from_logits(n_actions: usize, logits: &[f64]) -> Self {
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks(n_actions) {
            probs.extend(softmax(row));
        }
        Self { n_actions, probs }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Product policy `pi = pi^1 x ... x pi^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularJointPolicy {
    agents: Vec<AgentTable>,
}

impl TabularJointPolicy {
    pub fn new(agents: Vec<AgentTable>) -> Result<Self> {
        let Some(first) = agents.first() else {
            return Err(Error::InvalidPolicy("joint policy needs an agent".into()));
        };
        let n_states = first.n_states();
        if let Some(bad) = agents.iter().find(|t| t.n_states() != n_states) {
            return Err(Error::DimensionMismatch {
                context: "agent table states",
                expected: n_states,
                got: bad.n_states(),
            });
        }
        Ok(Self { agents })
    }

    pub fn uniform(game: &TabularGame) -> Self {
        Self {
            agents: game
                .action_counts()
                .iter()
                .map(|&k| AgentTable::uniform(game.n_states(), k))
                .collect(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_states(&self) -> usize {
        self.agents[0].n_states()
    }

    pub fn agent(&self, i: usize) -> &AgentTable {
        &self.agents[i]
    }

    pub fn agents(&self) -> &[AgentTable] {
        &self.agents
    }

    pub fn action_counts(&self) -> Vec<usize> {
        self.agents.iter().map(AgentTable::n_actions).collect()
    }

    /// Copy with agent `i`'s table replaced.
    pub fn with_agent(&self, i: usize, table: AgentTable) -> Self {
        let mut agents = self.agents.clone();
        agents[i] = table;
        Self { agents }
    }

    /// `pi(a|s)` for a joint action given per-agent indices.
    pub fn joint_prob(&self, s: usize, actions: &[usize]) -> f64 {
        self.agents
            .iter()
            .zip(actions)
            .map(|(t, &a)| t.prob(s, a))
            .product()
    }

    /// Probability of every joint action in state `s`.
    pub fn joint_row(&self, space: &JointActionSpace, s: usize) -> Vec<f64> {
        (0..space.size())
            .map(|j| {
                (0..self.agents.len())
                    .map(|i| self.agents[i].prob(s, space.component(j, i)))
                    .product()
            })
            .collect()
    }

    /// Checks that the policy's shape matches `game`.
    pub fn check_against(&self, game: &TabularGame) -> Result<()> {
        if self.n_agents() != game.n_agents() {
            return Err(Error::DimensionMismatch {
                context: "policy agents",
                expected: game.n_agents(),
                got: self.n_agents(),
            });
        }
        if self.n_states() != game.n_states() {
            return Err(Error::DimensionMismatch {
                context: "policy states",
                expected: game.n_states(),
                got: self.n_states(),
            });
        }
        for (i, (t, &k)) in self.agents.iter().zip(game.action_counts()).enumerate() {
            if t.n_actions() != k {
                return Err(Error::InvalidPolicy(format!(
                    "agent {i} has {} actions, game has {k}",
                    t.n_actions()
                )));
            }
        }
        Ok(())
    }
}
