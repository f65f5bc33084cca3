//! Subset state-action values and the multi-agent advantage decomposition.

use crate::error::{Error, Result};
use crate::tabular::eval::{exact_state_value, q_from_values, JointTable};
use crate::tabular::game::{for_each_assignment, JointActionSpace, TabularGame};
use crate::tabular::policy::TabularJointPolicy;

pub(crate) fn validate_subset(n_agents: usize, subset: &[usize]) -> Result<()> {
    let mut seen = vec![false; n_agents];
    for &i in subset {
        if i >= n_agents {
            return Err(Error::InvalidArgument(format!(
                "agent {i} out of range for {n_agents} agents"
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("agent {i} listed twice")));
        }
    }
    Ok(())
}

fn validate_actions(counts: &[usize], subset: &[usize], actions: &[usize]) -> Result<()> {
    if subset.len() != actions.len() {
        return Err(Error::DimensionMismatch {
            context: "subset actions",
            expected: subset.len(),
            got: actions.len(),
        });
    }
    for (&i, &a) in subset.iter().zip(actions) {
        if a >= counts[i] {
            return Err(Error::InvalidAction(format!(
                "action {a} out of range for agent {i} with {} actions",
                counts[i]
            )));
        }
    }
    Ok(())
}

pub(crate) fn complement(n_agents: usize, subset: &[usize]) -> Vec<usize> {
    (0..n_agents).filter(|i| !subset.contains(i)).collect()
}

/// Joint `Q` of one policy plus the policy itself; answers subset queries
/// without re-solving the value system.
#[derive(Debug, Clone)]
pub struct SubsetOracle<'a> {
    space: &'a JointActionSpace,
    policy: &'a TabularJointPolicy,
    q: JointTable,
    values: Vec<f64>,
}

impl<'a> SubsetOracle<'a> {
    pub fn new(game: &'a TabularGame, policy: &'a TabularJointPolicy) -> Result<Self> {
        let values = exact_state_value(game, policy)?;
        let q = q_from_values(game, &values);
        Ok(Self {
            space: game.joint_space(),
            policy,
            q,
            values,
        })
    }

    pub fn q(&self) -> &JointTable {
        &self.q
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Q^{subset}(s, a^{subset})`: expectation of the joint `Q` over the
    /// complement agents' actions drawn from the policy.
    pub fn subset_q_at(&self, s: usize, subset: &[usize], actions: &[usize]) -> f64 {
        let n = self.space.n_agents();
        let rest = complement(n, subset);
        let mut full = vec![0usize; n];
        for (&i, &a) in subset.iter().zip(actions) {
            full[i] = a;
        }
        let mut total = 0.0;
        for_each_assignment(self.space.counts(), &rest, |rest_actions| {
            let mut w = 1.0;
            for (&i, &a) in rest.iter().zip(rest_actions) {
                full[i] = a;
                w *= self.policy.agent(i).prob(s, a);
            }
            if w != 0.0 {
                total += w * self.q.get(s, self.space.encode(&full));
            }
        });
        total
    }

    /// `A^{eval}(s, a^{given}, a^{eval}) = Q^{given, eval} - Q^{given}`.
    pub fn subset_advantage_at(
        &self,
        s: usize,
        given: &[usize],
        given_actions: &[usize],
        eval: &[usize],
        eval_actions: &[usize],
    ) -> f64 {
        let mut union = given.to_vec();
        union.extend_from_slice(eval);
        let mut union_actions = given_actions.to_vec();
        union_actions.extend_from_slice(eval_actions);
        self.subset_q_at(s, &union, &union_actions) - self.subset_q_at(s, given, given_actions)
    }

    /// Max over states and subset actions of the decomposition residual.
    /// `drop_last_term` removes the final summand, breaking the identity on
    /// purpose (negative control for the verification suite).
    pub(crate) fn decomposition_error(&self, subset: &[usize], drop_last_term: bool) -> f64 {
        let mut worst = 0.0_f64;
        let terms = if drop_last_term {
            subset.len().saturating_sub(1)
        } else {
            subset.len()
        };
        for s in 0..self.q.n_states() {
            for_each_assignment(self.space.counts(), subset, |actions| {
                let joint = self.subset_advantage_at(s, &[], &[], subset, actions);
                let sum: f64 = (0..terms)
                    .map(|j| {
                        self.subset_advantage_at(
                            s,
                            &subset[..j],
                            &actions[..j],
                            &subset[j..=j],
                            &actions[j..=j],
                        )
                    })
                    .sum();
                worst = worst.max((joint - sum).abs());
            });
        }
        worst
    }
}

pub fn subset_q(
    game: &TabularGame,
    policy: &TabularJointPolicy,
    subset: &[usize],
    subset_actions: &[usize],
) -> Result<Vec<f64>> {
    validate_subset(game.n_agents(), subset)?;
    validate_actions(game.action_counts(), subset, subset_actions)?;
    let oracle = SubsetOracle::new(game, policy)?;
    Ok((0..game.n_states())
        .map(|s| oracle.subset_q_at(s, subset, subset_actions))
        .collect())
}

pub fn subset_advantage(
    game: &TabularGame,
    policy: &TabularJointPolicy,
    given_subset: &[usize],
    given_actions: &[usize],
    eval_subset: &[usize],
    eval_actions: &[usize],
) -> Result<Vec<f64>> {
    validate_subset(game.n_agents(), given_subset)?;
    validate_subset(game.n_agents(), eval_subset)?;
    if let Some(i) = given_subset.iter().find(|i| eval_subset.contains(i)) {
        return Err(Error::InvalidArgument(format!(
            "agent {i} appears in both subsets"
        )));
    }
    validate_actions(game.action_counts(), given_subset, given_actions)?;
    validate_actions(game.action_counts(), eval_subset, eval_actions)?;
    let oracle = SubsetOracle::new(game, policy)?;
    Ok((0..game.n_states())
        .map(|s| oracle.subset_advantage_at(s, given_subset, given_actions, eval_subset, eval_actions))
        .collect())
}

/// Max residual of `A^{i_1:m}(s, a) = sum_j A^{i_j}(s, a^{i_1:j-1}, a^{i_j})`
/// over every state and every action assignment of the ordered subset.
pub fn check_advantage_decomposition(
    game: &TabularGame,
    policy: &TabularJointPolicy,
    subset: &[usize],
) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("subset must be nonempty".into()));
    }
    validate_subset(game.n_agents(), subset)?;
    let oracle = SubsetOracle::new(game, policy)?;
    Ok(oracle.decomposition_error(subset, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::eval::exact_advantage;
    use crate::tabular::policy::AgentTable;

    fn two_agent_game() -> (TabularGame, TabularJointPolicy) {
        let counts = vec![2, 3];
        let n_joint = 6;
        let mut transition = Vec::new();
        for s in 0..2 {
            for j in 0..n_joint {
                let p = 0.1 + 0.1 * ((s + j) % 5) as f64;
                transition.extend([p, 1.0 - p]);
            }
        }
        let reward = (0..12).map(|i| ((i * 7) % 5) as f64 / 4.0 - 0.5).collect();
        let game = TabularGame::new(counts, 2, transition, reward, 0.8, vec![0.6, 0.4]).unwrap();
        let policy = TabularJointPolicy::new(vec![
            AgentTable::new(2, 2, vec![0.3, 0.7, 0.9, 0.1]).unwrap(),
            AgentTable::new(2, 3, vec![0.2, 0.3, 0.5, 0.6, 0.1, 0.3]).unwrap(),
        ])
        .unwrap();
        (game, policy)
    }

    #[test]
    fn full_subset_is_joint_q_and_empty_is_value() {
        let (game, policy) = two_agent_game();
        let oracle = SubsetOracle::new(&game, &policy).unwrap();
        let q = subset_q(&game, &policy, &[0, 1], &[1, 2]).unwrap();
        for s in 0..2 {
            assert_eq!(q[s], oracle.q().get(s, game.joint_space().encode(&[1, 2])));
        }
        // Permuted subset addresses the same joint entry.
        let q_rev = subset_q(&game, &policy, &[1, 0], &[2, 1]).unwrap();
        assert_eq!(q, q_rev);
        let v = subset_q(&game, &policy, &[], &[]).unwrap();
        for s in 0..2 {
            assert!((v[s] - oracle.values()[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_agent_subset_by_hand() {
        let (game, policy) = two_agent_game();
        let oracle = SubsetOracle::new(&game, &policy).unwrap();
        for a1 in 0..2 {
            let got = subset_q(&game, &policy, &[0], &[a1]).unwrap();
            for s in 0..2 {
                let mut expected = 0.0;
                for a2 in 0..3 {
                    expected += policy.agent(1).prob(s, a2)
                        * oracle.q().get(s, game.joint_space().encode(&[a1, a2]));
                }
                assert!((got[s] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn advantage_collapses() {
        let (game, policy) = two_agent_game();
        let a = exact_advantage(&game, &policy).unwrap();
        let sub = subset_advantage(&game, &policy, &[], &[], &[0, 1], &[0, 2]).unwrap();
        for s in 0..2 {
            assert!((sub[s] - a.get(s, game.joint_space().encode(&[0, 2]))).abs() < 1e-12);
        }
        let zero = subset_advantage(&game, &policy, &[1], &[2], &[], &[]).unwrap();
        assert!(zero.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn split_matches_subset_q_composition() {
        let (game, policy) = two_agent_game();
        for a1 in 0..2 {
            for a2 in 0..3 {
                let adv = subset_advantage(&game, &policy, &[0], &[a1], &[1], &[a2]).unwrap();
                let both = subset_q(&game, &policy, &[0, 1], &[a1, a2]).unwrap();
                let first = subset_q(&game, &policy, &[0], &[a1]).unwrap();
                for s in 0..2 {
                    assert!((adv[s] - (both[s] - first[s])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn argument_errors() {
        let (game, policy) = two_agent_game();
        assert!(subset_q(&game, &policy, &[0, 0], &[0, 0]).is_err());
        assert!(subset_q(&game, &policy, &[1], &[3]).is_err());
        assert!(subset_q(&game, &policy, &[2], &[0]).is_err());
        assert!(subset_advantage(&game, &policy, &[0], &[0], &[0, 1], &[0, 0]).is_err());
        assert!(check_advantage_decomposition(&game, &policy, &[]).is_err());
    }

    #[test]
    fn decomposition_holds() {
        let (game, policy) = two_agent_game();
        assert_eq!(check_advantage_decomposition(&game, &policy, &[1]).unwrap(), 0.0);
        assert!(check_advantage_decomposition(&game, &policy, &[0, 1]).unwrap() < 1e-12);
        assert!(check_advantage_decomposition(&game, &policy, &[1, 0]).unwrap() < 1e-12);
        let oracle = SubsetOracle::new(&game, &policy).unwrap();
        assert!(oracle.decomposition_error(&[0, 1], true) > 1e-3);
    }
}
