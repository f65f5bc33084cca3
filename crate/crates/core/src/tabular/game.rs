use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-12;

/// Upper bound on `|S| * prod |A^i|` so dense solves stay cheap.
pub const MAX_JOINT_ENTRIES: usize = 10_000;

/// Mixed-radix indexing of joint actions. Agent 0 is the most significant
/// digit, the last agent varies fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointActionSpace {
    counts: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl JointActionSpace {
    pub fn new(counts: &[usize]) -> Self {
        let mut strides = vec![1; counts.len()];
        for i in (0..counts.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        let size = counts.iter().product();
        Self {
            counts: counts.to_vec(),
            strides,
            size,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Number of joint actions.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn encode(&self, actions: &[usize]) -> usize {
        debug_assert_eq!(actions.len(), self.counts.len());
        actions
            .iter()
            .zip(&self.strides)
            .map(|(a, stride)| a * stride)
            .sum()
    }

    /// Action of `agent` inside joint action `joint`.
    pub fn component(&self, joint: usize, agent: usize) -> usize {
        (joint / self.strides[agent]) % self.counts[agent]
    }

    pub fn decode(&self, joint: usize) -> Vec<usize> {
        (0..self.counts.len())
            .map(|i| self.component(joint, i))
            .collect()
    }
}

/// Visits every assignment of actions to `agents` (in the listed order).
/// The callback receives one action per listed agent.
pub fn for_each_assignment(counts: &[usize], agents: &[usize], mut f: impl FnMut(&[usize])) {
    let mut actions = vec![0usize; agents.len()];
    if agents.iter().any(|&i| counts[i] == 0) {
        return;
    }
    loop {
        f(&actions);
        let mut pos = agents.len();
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            actions[pos] += 1;
            if actions[pos] < counts[agents[pos]] {
                break;
            }
            actions[pos] = 0;
        }
    }
}

/// A finite, fully cooperative Markov game with a shared reward.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularGame {
    n_states: usize,
    space: JointActionSpace,
    /// Indexed `[(s * n_joint + a) * n_states + s']`.
    transition: Vec<f64>,
    /// Indexed `[s * n_joint + a]`.
    reward: Vec<f64>,
    gamma: f64,
    initial_dist: Vec<f64>,
}

impl TabularGame {
    /// Builds and validates a game from flat row-major tensors.
    pub fn new(
        action_counts: Vec<usize>,
        n_states: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if action_counts.is_empty() {
            return Err(Error::InvalidGame("game needs at least one agent".into()));
        }
        if n_states == 0 || action_counts.contains(&0) {
            return Err(Error::InvalidGame(
                "state and action counts must be positive".into(),
            ));
        }
        let space = JointActionSpace::new(&action_counts);
        let n_joint = space.size();
        if n_states * n_joint > MAX_JOINT_ENTRIES {
            return Err(Error::InvalidGame(format!(
                "|S| * |A| = {} exceeds the dense cap {MAX_JOINT_ENTRIES}",
                n_states * n_joint
            )));
        }
        if transition.len() != n_states * n_joint * n_states {
            return Err(Error::DimensionMismatch {
                context: "transition tensor",
                expected: n_states * n_joint * n_states,
                got: transition.len(),
            });
        }
        if reward.len() != n_states * n_joint {
            return Err(Error::DimensionMismatch {
                context: "reward tensor",
                expected: n_states * n_joint,
                got: reward.len(),
            });
        }
        if initial_dist.len() != n_states {
            return Err(Error::DimensionMismatch {
                context: "initial distribution",
                expected: n_states,
                got: initial_dist.len(),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidGame(format!("gamma {gamma} outside [0, 1)")));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidGame(format!("non-finite reward {r}")));
        }
        check_distribution(&initial_dist, "initial distribution")?;
        for (row_idx, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row, "transition row").map_err(|e| {
                Error::InvalidGame(format!(
                    "state {} joint action {}: {e}",
                    row_idx / n_joint,
                    row_idx % n_joint
                ))
            })?;
        }
        Ok(Self {
            n_states,
            space,
            transition,
            reward,
            gamma,
            initial_dist,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.space.n_agents()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn action_counts(&self) -> &[usize] {
        self.space.counts()
    }

    pub fn joint_space(&self) -> &JointActionSpace {
        &self.space
    }

    pub fn n_joint(&self) -> usize {
        self.space.size()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn reward(&self, s: usize, joint: usize) -> f64 {
        self.reward[s * self.n_joint() + joint]
    }

    /// Distribution over next states.
    pub fn next_state_dist(&self, s: usize, joint: usize) -> &[f64] {
        let start = (s * self.n_joint() + joint) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Copy of this game with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidGame(format!("gamma {gamma} outside [0, 1)")));
        }
        let mut game = self.clone();
        game.gamma = gamma;
        Ok(game)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GameFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GameFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidGame(format!("{what} has invalid entry {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidGame(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// On-disk JSON layout: nested arrays `transition[s][joint][s']` and
/// `reward[s][joint]`, joint actions in [`JointActionSpace`] order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameFile {
    n_agents: usize,
    n_states: usize,
    action_counts: Vec<usize>,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    gamma: f64,
    initial_dist: Vec<f64>,
}

impl From<&TabularGame> for GameFile {
    fn from(game: &TabularGame) -> Self {
        let n_joint = game.n_joint();
        let transition = (0..game.n_states)
            .map(|s| {
                (0..n_joint)
                    .map(|a| game.next_state_dist(s, a).to_vec())
                    .collect()
            })
            .collect();
        let reward = game.reward.chunks(n_joint).map(<[f64]>::to_vec).collect();
        GameFile {
            n_agents: game.n_agents(),
            n_states: game.n_states,
            action_counts: game.action_counts().to_vec(),
            transition,
            reward,
            gamma: game.gamma,
            initial_dist: game.initial_dist.clone(),
        }
    }
}

impl TryFrom<GameFile> for TabularGame {
    type Error = Error;

    fn try_from(file: GameFile) -> Result<Self> {
        if file.n_agents != file.action_counts.len() {
            return Err(Error::DimensionMismatch {
                context: "action_counts",
                expected: file.n_agents,
                got: file.action_counts.len(),
            });
        }
        if file.transition.len() != file.n_states || file.reward.len() != file.n_states {
            return Err(Error::InvalidGame(
                "outer dimension of transition/reward must equal n_states".into(),
            ));
        }
        let transition = file.transition.into_iter().flatten().flatten().collect();
        let reward = file.reward.into_iter().flatten().collect();
        TabularGame::new(
            file.action_counts,
            file.n_states,
            transition,
            reward,
            file.gamma,
            file.initial_dist,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin_game() -> TabularGame {
        // 2 states, 2 agents with 2 actions each; joint action 3 moves to state 1.
        let mut transition = Vec::new();
        for _s in 0..2 {
            for a in 0..4 {
                if a == 3 {
                    transition.extend([0.0, 1.0]);
                } else {
                    transition.extend([1.0, 0.0]);
                }
            }
        }
        let reward = vec![0.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.5, 0.5];
        TabularGame::new(vec![2, 2], 2, transition, reward, 0.9, vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn joint_space_round_trip() {
        let space = JointActionSpace::new(&[2, 3, 2]);
        assert_eq!(space.size(), 12);
        for j in 0..12 {
            assert_eq!(space.encode(&space.decode(j)), j);
        }
        assert_eq!(space.encode(&[1, 2, 1]), 11);
        assert_eq!(space.component(11, 1), 2);
    }

    #[test]
    fn assignments_cover_product() {
        let mut seen = Vec::new();
        for_each_assignment(&[2, 3, 2], &[2, 1], |a| seen.push(a.to_vec()));
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 0]);
        assert_eq!(seen[5], vec![1, 2]);
        let mut empty = 0;
        for_each_assignment(&[2, 3], &[], |_| empty += 1);
        assert_eq!(empty, 1);
    }

    #[test]
    fn rejects_bad_rows() {
        let err = TabularGame::new(vec![1], 1, vec![0.5], vec![1.0], 0.9, vec![1.0]);
        assert!(matches!(err, Err(Error::InvalidGame(_))));
        let err = TabularGame::new(vec![1], 1, vec![1.0], vec![1.0], 1.0, vec![1.0]);
        assert!(err.is_err());
        let err = TabularGame::new(vec![1], 1, vec![1.0], vec![f64::NAN], 0.5, vec![1.0]);
        assert!(err.is_err());
        let err = TabularGame::new(vec![2], 1, vec![1.5, -0.5], vec![0.0, 0.0], 0.5, vec![1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let game = coin_game();
        let text = game.to_json().unwrap();
        assert_eq!(TabularGame::from_json(&text).unwrap(), game);
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["bogus"] = serde_json::json!(1);
        assert!(TabularGame::from_json(&value.to_string()).is_err());
    }
}
